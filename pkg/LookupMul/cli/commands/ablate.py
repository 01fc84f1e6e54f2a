from LookupMul.amm.partition import PARTITIONS
from LookupMul.amm.table import METHODS, OBJECTIVES
from LookupMul.cli.common import (ExperimentRow, add_experiment_args, cell_seed, fit_config,
                                  layer_breakeven, load_experiment, objective_label, parse_int_list,
                                  relative, run_cells, storage_note, write_report)
from LookupMul.nn.model import evaluate
from LookupMul.nn.replace import replace_layer
from LookupMul.utils.logger import logger
from LookupMul.utils.render_template import render_report


def register(subparsers):
    parser = subparsers.add_parser("ablate", help="replace one layer at a time for every C")
    add_experiment_args(parser, "ablate.csv")
    parser.add_argument("--partition", choices=PARTITIONS, default="naive")
    parser.add_argument("--method", choices=METHODS, default="table")
    parser.add_argument("--objective", choices=OBJECTIVES, default="kld")
    parser.set_defaults(handler=cmd_ablate)


def cmd_ablate(args) -> int:
    model, train_set, test_set, exact = load_experiment(args)
    codebooks = parse_int_list(args.codebooks)
    cfg = fit_config(args, args.method, args.objective)

    def cell(l, c):
        def run():
            replaced = replace_layer(model, l, train_set, c, args.partition, cfg,
                                     cell_seed(args.seed, l, c))
            accuracy = evaluate(replaced, test_set)
            logger.info(f"Ablation layer {l + 1}, C={c}: accuracy {accuracy:.4f}")
            return [ExperimentRow("ablate", str(l + 1), c, args.partition,
                                  objective_label(cfg, model.layers[l]), accuracy,
                                  relative(accuracy, exact), args.mac_lac_ratio,
                                  layer_breakeven(model, l, c, args.mac_lac_ratio))]
        return run

    cells = []
    for l, layer in enumerate(model.layers):
        for c in codebooks:
            if c > layer.in_dim:
                logger.warning(f"Skipping C={c} for layer {l + 1} with only {layer.in_dim} inputs")
                continue
            cells.append(cell(l, c))
    rows = run_cells(cells, args.jobs)
    write_report(args, rows)

    notes = [f"exact accuracy {100 * exact:.2f}%"]
    notes += [storage_note(model, l, max(codebooks)) for l in range(model.num_layers)]
    print(render_report("Single-layer ablation", rows, notes))
    return 0
