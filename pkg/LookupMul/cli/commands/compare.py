from LookupMul.amm.partition import PARTITIONS
from LookupMul.cli.common import (ExperimentRow, add_experiment_args, cell_seed, fit_config,
                                  layer_breakeven, load_experiment, objective_label, parse_int_list,
                                  relative, run_cells, write_report)
from LookupMul.exceptions import InvalidArgument
from LookupMul.nn.model import evaluate
from LookupMul.nn.replace import replace_layer
from LookupMul.utils.logger import logger
from LookupMul.utils.render_template import render_report

# prototype baseline first, then direct table fits
VARIANTS = (("prototype", "mse"), ("table", "mse"), ("table", "kld"))


def register(subparsers):
    parser = subparsers.add_parser("compare", help="baseline vs table fits on the classifier layer")
    add_experiment_args(parser, "compare.csv")
    parser.add_argument("--partitions", default=",".join(PARTITIONS),
                        help="comma separated subset of naive,opq,r2")
    parser.set_defaults(handler=cmd_compare)


def cmd_compare(args) -> int:
    model, train_set, test_set, exact = load_experiment(args)
    codebooks = parse_int_list(args.codebooks)
    partitions = [p for p in args.partitions.split(",") if p]
    for p in partitions:
        if p not in PARTITIONS:
            raise InvalidArgument(f"unknown partition {p!r}, expected one of {PARTITIONS}")
    l = model.num_layers - 1
    in_dim = model.layers[l].in_dim

    def cell(c, p_index, v_index):
        method, objective = VARIANTS[v_index]
        partition = partitions[p_index]

        def run():
            cfg = fit_config(args, method, objective)
            replaced = replace_layer(model, l, train_set, c, partition, cfg,
                                     cell_seed(args.seed, c, p_index, v_index))
            accuracy = evaluate(replaced, test_set)
            logger.info(f"Compare C={c} {partition}/{method}/{objective}: accuracy {accuracy:.4f}")
            return [ExperimentRow("compare", str(l + 1), c, partition,
                                  objective_label(cfg, model.layers[l]), accuracy,
                                  relative(accuracy, exact), args.mac_lac_ratio,
                                  layer_breakeven(model, l, c, args.mac_lac_ratio))]
        return run

    cells = []
    for c in codebooks:
        if c > in_dim:
            logger.warning(f"Skipping C={c} for layer {l + 1} with only {in_dim} inputs")
            continue
        cells += [cell(c, p, v) for p in range(len(partitions)) for v in range(len(VARIANTS))]
    rows = run_cells(cells, args.jobs)
    write_report(args, rows)
    print(render_report("Classifier-layer comparison", rows, [f"exact accuracy {100 * exact:.2f}%"]))
    return 0
