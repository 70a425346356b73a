import io
import logging
import os
import sys
import unittest
from unittest.mock import patch

# Add the project root to sys.path so we can import condensegan_app
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from condensegan_app.logging_setup import PACKAGE_LOGGER, init_logging, level_for


class TestLoggingSetup(unittest.TestCase):

    def tearDown(self):
        logger = logging.getLogger(PACKAGE_LOGGER)
        for handler in list(logger.handlers):
            if getattr(handler, "_condensegan", False):
                logger.removeHandler(handler)

    def test_level_for(self):
        self.assertEqual(level_for(0), logging.WARNING)
        self.assertEqual(level_for(1), logging.INFO)
        self.assertEqual(level_for(3), logging.DEBUG)

    def test_single_handler_after_repeated_init(self):
        init_logging(0)
        logger = init_logging(2)
        tagged = [h for h in logger.handlers if getattr(h, "_condensegan", False)]
        self.assertEqual(len(tagged), 1)
        self.assertEqual(logger.level, logging.DEBUG)
        self.assertFalse(logger.propagate)

    def test_messages_go_to_stderr(self):
        stream = io.StringIO()
        with patch("sys.stderr", stream):
            init_logging(1)
        logging.getLogger(PACKAGE_LOGGER + ".trainer").info("epoch %d done", 3)
        logging.getLogger(PACKAGE_LOGGER + ".trainer").debug("hidden")
        output = stream.getvalue()
        self.assertIn("INFO condensegan_app.trainer: epoch 3 done", output)
        self.assertNotIn("hidden", output)


if __name__ == '__main__':
    unittest.main()
