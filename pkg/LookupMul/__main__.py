import sys
import logging

from LookupMul.cli import main

logging.basicConfig(
    level=logging.WARNING,
    datefmt="%d/%m/%Y %H:%M:%S",
    format='[%(asctime)s] {%(pathname)s:%(lineno)d} %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler(stream=sys.stderr)],)

logging.getLogger("sklearn").setLevel(logging.ERROR)
logging.getLogger("asyncio").setLevel(logging.ERROR)

if __name__ == "__main__":
    sys.exit(main())
