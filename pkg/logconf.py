import logging
import logging.config
import os
import yaml

DEFAULT_LOGGING_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'logging.yaml')

def log_setup(level: str = None):
    """
    Set up console and file logging from logging.yaml, or from the file named by the LOGGING_CONFIG
    environment variable. `level` overrides the console and vidmask logger levels (e.g. DEBUG).
    """

    # Load the config file
    with open(os.getenv('LOGGING_CONFIG', DEFAULT_LOGGING_CONFIG), 'rt') as f:
        config = yaml.safe_load(f.read())

    if level:
        config['handlers']['console']['level'] = level
        config.setdefault('loggers', {}).setdefault('vidmask', {})['level'] = level

    # Configure the logging module with the config file
    logging.config.dictConfig(config)

    install_default_record_field(logging, 'progress', '')


def install_default_record_field(logging, field, value):
    """
    Wraps the log record factory to add a default value for `field`.
    Required to avoid a KeyError when the field is not set
    Such as when logging from a worker thread outside an MDC block.
    Installing the same field twice leaves the current factory in place.
    """
    old_factory = logging.getLogRecordFactory()
    if field in getattr(old_factory, "default_fields", ()):
        return

    def record_factory(*args, **kwargs):
        record = old_factory(*args, **kwargs)
        if not hasattr(record, field):
            setattr(record, field, value)
        return record

    record_factory.default_fields = (*getattr(old_factory, "default_fields", ()), field)
    logging.setLogRecordFactory(record_factory)
