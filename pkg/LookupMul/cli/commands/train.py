from LookupMul.config import Training
from LookupMul.cli.common import add_data_args, load_data, parse_int_list
from LookupMul.nn.model import MlpModel, evaluate
from LookupMul.nn.training import TrainConfig, train
from LookupMul.utils.archive import save_model
from LookupMul.utils.human_readable import humanbytes
from LookupMul.utils.logger import logger


def register(subparsers):
    parser = subparsers.add_parser("train", help="train the exact MLP and save an ITLM archive")
    add_data_args(parser)
    parser.add_argument("--arch", default=None,
                        help="comma separated layer widths, default D,30,30,30,10")
    parser.add_argument("--epochs", type=int, default=Training.EPOCHS)
    parser.add_argument("--batch-size", type=int, default=Training.BATCH_SIZE)
    parser.add_argument("--learn-rate", type=float, default=Training.LEARN_RATE)
    parser.add_argument("--out", default="model.itlm")
    parser.set_defaults(handler=cmd_train)


def cmd_train(args) -> int:
    train_set, test_set = load_data(args)
    arch = parse_int_list(args.arch) if args.arch else [train_set.dim, 30, 30, 30, train_set.num_classes]
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      learn_rate=args.learn_rate, seed=args.seed)

    print("------------------------ Training Exact MLP ------------------------")
    model = train(MlpModel.initialize(arch, seed=args.seed), train_set, cfg)
    accuracy = evaluate(model, test_set)
    model.metadata.update({"dataset": args.dataset, "test_accuracy": accuracy})
    size = save_model(args.out, model)

    logger.info(f"Test accuracy {accuracy:.4f} for architecture {arch}")
    print("                  arch =>> {}".format(",".join(str(n) for n in arch)))
    print("         test accuracy =>> {:.2f}%".format(100 * accuracy))
    print("               archive =>> {} ({})".format(args.out, humanbytes(size)))
    print("--------------------------------------------------------------------")
    return 0
