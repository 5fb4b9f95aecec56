import logging

logger = logging.getLogger("octoseq")
