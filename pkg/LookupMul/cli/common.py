import asyncio
import csv
import io
import json
import os
import subprocess
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence, Tuple

import aiofiles
import numpy as np

from LookupMul import __version__
from LookupMul.amm.encoder import ENCODERS
from LookupMul.amm.table import METHODS, OBJECTIVES, FitConfig, lac_cost_model, storage_bytes
from LookupMul.config import Experiment, Fitting, Training
from LookupMul.exceptions import InvalidArgument
from LookupMul.nn.model import MlpModel, activation_of, evaluate
from LookupMul.utils.archive import load_model
from LookupMul.utils.datasets import LabeledDataset, load_splits, verify_sha256
from LookupMul.utils.human_readable import humanbytes
from LookupMul.utils.logger import logger

CSV_HEADER = ("experiment", "layer", "codebooks", "partition", "objective",
              "accuracy", "relative_accuracy", "ratio", "breakeven_c")


@dataclass
class ExperimentRow:
    experiment: str
    layer: str
    codebooks: int
    partition: str
    objective: str
    accuracy: float
    relative_accuracy: float
    ratio: float
    breakeven_c: float

    def sort_key(self):
        layer = (1, 0) if self.layer == "all" else (0, int(self.layer))
        return (self.experiment, layer, self.codebooks, self.partition, self.objective)

    def csv_fields(self) -> List[str]:
        return [self.experiment, self.layer, str(self.codebooks), self.partition, self.objective,
                f"{self.accuracy:.6f}", f"{self.relative_accuracy:.6f}", f"{self.ratio:g}",
                f"{self.breakeven_c:.4f}"]


def parse_int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InvalidArgument(f"expected a comma separated list of integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise InvalidArgument(f"expected positive integers, got {text!r}")
    return values


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def cell_seed(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed)] + [int(k) for k in keys])


def add_data_args(parser):
    parser.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    parser.add_argument("--data-root", default=Experiment.DATA_ROOT,
                        help="directory holding the dataset files (env LOOKUPMUL_DATA_ROOT)")
    parser.add_argument("--sha256", action="append", default=[], metavar="FILE=HEX",
                        help="verify a dataset file against its SHA-256 before use")
    parser.add_argument("--train-limit", type=int, default=None,
                        help="use only the first N training rows for fitting and fine-tuning")
    parser.add_argument("--seed", type=int, default=Training.SEED)


def add_experiment_args(parser, default_out: str):
    add_data_args(parser)
    parser.add_argument("--model", required=True, help="trained ITLM archive")
    parser.add_argument("--codebooks", default=Experiment.CODEBOOKS, help="comma separated C values")
    parser.add_argument("--encoder", choices=ENCODERS, default="hash")
    parser.add_argument("--lam", type=float, default=Fitting.LAMBDA)
    parser.add_argument("--opt-steps", type=int, default=Fitting.OPT_STEPS)
    parser.add_argument("--fit-learn-rate", type=float, default=Fitting.LEARN_RATE)
    parser.add_argument("--max-fit-rows", type=int, default=Fitting.MAX_FIT_ROWS)
    parser.add_argument("--quantize", action="store_true", default=Fitting.QUANTIZE,
                        help="run replaced layers on 8-bit tables")
    parser.add_argument("--mac-lac-ratio", type=float, default=Experiment.MAC_LAC_RATIO,
                        help="cost of one multiply-accumulate over one lookup-accumulate")
    parser.add_argument("--jobs", type=int, default=Experiment.JOBS)
    parser.add_argument("--out", default=default_out, help="CSV report path")


def fit_config(args, method: str = "table", objective: str = "mse") -> FitConfig:
    if method not in METHODS or objective not in OBJECTIVES:
        raise InvalidArgument(f"bad method/objective {method}/{objective}")
    return FitConfig(lam=args.lam, objective=objective, opt_steps=args.opt_steps,
                     learn_rate=args.fit_learn_rate, method=method, encoder=args.encoder,
                     quantize=args.quantize, max_fit_rows=args.max_fit_rows)


def objective_label(cfg: FitConfig, layer) -> str:
    """What a layer is actually fitted with; hidden layers fall back to MSE."""
    if cfg.method == "prototype":
        return "prototype"
    return cfg.for_layer(activation_of(layer)).objective


def load_data(args) -> Tuple[LabeledDataset, LabeledDataset]:
    for item in args.sha256:
        path, _, digest = item.partition("=")
        if not digest:
            raise InvalidArgument(f"--sha256 expects FILE=HEX, got {item!r}")
        verify_sha256(path, digest)
    train_set, test_set = load_splits(args.dataset, args.data_root)
    return train_set.head(args.train_limit), test_set


def load_experiment(args) -> Tuple[MlpModel, LabeledDataset, LabeledDataset, float]:
    model = load_model(args.model)
    if any(model.replaced()):
        raise InvalidArgument(f"{args.model} already contains replaced layers")
    train_set, test_set = load_data(args)
    if train_set.dim != model.in_dim:
        raise InvalidArgument(f"{args.dataset} rows have {train_set.dim} dims, model expects {model.in_dim}")
    exact = evaluate(model, test_set)
    logger.info(f"Exact model accuracy: {exact:.4f}")
    return model, train_set, test_set, exact


def relative(accuracy: float, exact: float) -> float:
    return accuracy / exact if exact > 0 else 0.0


def layer_breakeven(model: MlpModel, l: int, c: int, ratio: float) -> float:
    layer = model.layers[l]
    return lac_cost_model(layer.in_dim, layer.out_dim, c, ratio).breakeven_c


def network_costs(model: MlpModel, c: int, ratio: float) -> Tuple[float, float, float]:
    """Summed (lookup cost, exact cost, breakeven C) over all layers."""
    amm = exact = denom = 0.0
    for layer in model.layers:
        est = lac_cost_model(layer.in_dim, layer.out_dim, min(c, layer.in_dim), ratio)
        amm += est.amm_cost
        exact += est.exact_cost
        denom += (4.0 + layer.out_dim) / ratio
    return amm, exact, exact / denom


def storage_note(model: MlpModel, l: int, c: int) -> str:
    layer = model.layers[l]
    dense, table = storage_bytes(layer.in_dim, layer.out_dim, c)
    return f"layer {l + 1} at C={c}: weights {humanbytes(dense)}, tables {humanbytes(table)}"


def run_cells(cells: Sequence[Callable[[], List[ExperimentRow]]], jobs: int) -> List[ExperimentRow]:
    """Run independent cells, at most ``jobs`` at a time; rows come back sorted."""
    async def runner():
        gate = asyncio.Semaphore(max(1, jobs))

        async def run(cell):
            async with gate:
                return await asyncio.to_thread(cell)

        return await asyncio.gather(*[run(cell) for cell in cells])

    results = asyncio.run(runner())
    rows = [row for batch in results for row in batch]
    return sorted(rows, key=ExperimentRow.sort_key)


async def _write_outputs(path: str, rows: Iterable[ExperimentRow], manifest: dict):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_fields())
    async with aiofiles.open(path, "w") as f:
        await f.write(buf.getvalue())
    async with aiofiles.open(path + ".run.json", "w") as f:
        await f.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_report(args, rows: List[ExperimentRow]) -> None:
    directory = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(directory, exist_ok=True)
    flags = {k: v for k, v in vars(args).items() if k != "handler"}
    manifest = {"seed": args.seed, "version": version_string(), "flags": flags,
                "columns": list(CSV_HEADER), "rows": len(rows)}
    asyncio.run(_write_outputs(args.out, rows, manifest))
    logger.info(f"Wrote {len(rows)} rows to {args.out}")

