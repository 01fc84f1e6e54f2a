from os import environ as env
from dotenv import load_dotenv

load_dotenv()


def _flag(name, default="0"):
    return str(env.get(name, default)).lower() in ("1", "true", "t", "yes", "y")


class Fitting:
    CODEBOOK_SIZE = 16  # 4 comparisons -> 16 buckets, not configurable
    LAMBDA = float(env.get("FIT_LAMBDA", "1.0"))
    OPT_STEPS = int(env.get("FIT_OPT_STEPS", "300"))
    LEARN_RATE = float(env.get("FIT_LEARN_RATE", "1.0"))  # relative to the curvature bound
    OPQ_ITERS = int(env.get("FIT_OPQ_ITERS", "10"))
    KMEANS_ITERS = int(env.get("FIT_KMEANS_ITERS", "25"))
    MAX_FIT_ROWS = int(env.get("FIT_MAX_ROWS", "8192"))
    QUANTIZE = _flag("FIT_QUANTIZE")


class Training:
    EPOCHS = int(env.get("TRAIN_EPOCHS", "20"))
    BATCH_SIZE = int(env.get("TRAIN_BATCH_SIZE", "64"))
    LEARN_RATE = float(env.get("TRAIN_LEARN_RATE", "0.1"))
    MOMENTUM = float(env.get("TRAIN_MOMENTUM", "0.9"))
    DECAY_EVERY = int(env.get("TRAIN_DECAY_EVERY", "5"))
    DECAY = float(env.get("TRAIN_DECAY", "0.5"))
    FINETUNE_EPOCHS = int(env.get("FINETUNE_EPOCHS", "5"))
    FINETUNE_LEARN_RATE = float(env.get("FINETUNE_LEARN_RATE", "0.02"))
    SEED = int(env.get("SEED", "0"))


class Experiment:
    DATA_ROOT = str(env.get("LOOKUPMUL_DATA_ROOT", "data"))
    MAC_LAC_RATIO = float(env.get("MAC_LAC_RATIO", "1.0"))
    JOBS = int(env.get("JOBS", "1"))
    CODEBOOKS = str(env.get("CODEBOOKS", "1,2,4,8,16"))
    LOG_DIR = str(env.get("LOG_DIR", "logs"))
    QUIET = _flag("QUIET")
