import logging

logger = logging.getLogger('phasecode')
logger.setLevel(logging.INFO)

__version__ = '0.3.0'
