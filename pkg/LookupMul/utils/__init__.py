from .time_format import get_readable_time
from .human_readable import humanbytes
from .logger import logger
