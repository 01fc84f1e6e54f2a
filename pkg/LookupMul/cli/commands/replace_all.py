from LookupMul.amm.partition import PARTITIONS
from LookupMul.amm.table import METHODS, OBJECTIVES
from LookupMul.cli.common import (ExperimentRow, add_experiment_args, cell_seed, fit_config,
                                  layer_breakeven, load_experiment, network_costs, objective_label,
                                  parse_int_list, relative, run_cells, write_report)
from LookupMul.config import Training
from LookupMul.nn.replace import incremental_replace_all
from LookupMul.nn.training import TrainConfig
from LookupMul.utils.render_template import render_report


def register(subparsers):
    parser = subparsers.add_parser("replace-all", help="incrementally replace every layer")
    add_experiment_args(parser, "replace_all.csv")
    parser.add_argument("--partition", choices=PARTITIONS, default="naive")
    parser.add_argument("--method", choices=METHODS, default="table")
    parser.add_argument("--objective", choices=OBJECTIVES, default="kld")
    parser.add_argument("--finetune-epochs", type=int, default=Training.FINETUNE_EPOCHS)
    parser.add_argument("--finetune-learn-rate", type=float, default=Training.FINETUNE_LEARN_RATE)
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--no-finetune", action="store_true", help="skip fine-tuning between steps")
    mode.add_argument("--both", action="store_true", help="report runs with and without fine-tuning")
    parser.set_defaults(handler=cmd_replace_all)


def cmd_replace_all(args) -> int:
    model, train_set, test_set, exact = load_experiment(args)
    codebooks = parse_int_list(args.codebooks)
    cfg = fit_config(args, args.method, args.objective)
    tune = TrainConfig(epochs=args.finetune_epochs, learn_rate=args.finetune_learn_rate, seed=args.seed)
    modes = [True, False] if args.both else [not args.no_finetune]

    def cell(c, finetune):
        def run():
            experiment = "replace_all" if finetune else "replace_all_nofinetune"
            _, accuracies = incremental_replace_all(
                model, train_set, c, args.partition, cfg, tune, finetune=finetune,
                eval_data=test_set, rng=cell_seed(args.seed, c, int(finetune)))
            rows = []
            for l, accuracy in enumerate(accuracies):
                rows.append(ExperimentRow(experiment, str(l + 1), c, args.partition,
                                          objective_label(cfg, model.layers[l]), accuracy,
                                          relative(accuracy, exact), args.mac_lac_ratio,
                                          layer_breakeven(model, l, min(c, model.layers[l].in_dim),
                                                          args.mac_lac_ratio)))
            rows.append(ExperimentRow(experiment, "all", c, args.partition,
                                      objective_label(cfg, model.layers[-1]), accuracies[-1],
                                      relative(accuracies[-1], exact), args.mac_lac_ratio,
                                      network_costs(model, c, args.mac_lac_ratio)[2]))
            return rows
        return run

    rows = run_cells([cell(c, ft) for c in codebooks for ft in modes], args.jobs)
    write_report(args, rows)

    notes = [f"exact accuracy {100 * exact:.2f}%"]
    for c in codebooks:
        amm, dense, _ = network_costs(model, c, args.mac_lac_ratio)
        notes.append(f"C={c}: faster than exact matmul: {'yes' if amm < dense else 'no'} "
                     f"(lookup cost {amm:.0f} vs {dense:.0f} MAC per row)")
    print(render_report("Full-network replacement", rows, notes))
    return 0
