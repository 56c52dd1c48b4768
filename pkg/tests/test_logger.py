import logging

import pytest

import parkourpy.logger
from parkourpy import ParkourSim


@pytest.fixture
def sim():
    sim = ParkourSim()
    yield sim
    sim.logger.disabled = False
    sim.logger.setLevel(logging.NOTSET)


def test_logger_defaults(caplog, sim):
    assert sim.logger.level == logging.NOTSET
    assert sim.logger.name == "parkour-sim"

    sim.logger.debug("not shown")
    assert len(caplog.record_tuples) == 0

    sim.logger.info("also not shown")
    assert len(caplog.record_tuples) == 0

    sim.logger.warning("warnings or higher are shown")
    assert len(caplog.record_tuples) == 1
    assert "warnings or higher are shown" in caplog.text


def test_logger_level(caplog):
    sim = ParkourSim(logger_level="INFO")
    try:
        assert sim.logger.level == logging.INFO

        sim.logger.debug("not shown")
        assert len(caplog.record_tuples) == 0

        sim.logger.info("this is shown")
        assert len(caplog.record_tuples) == 1
        assert "this is shown" in caplog.text
    finally:
        sim.logger.setLevel(logging.NOTSET)


def test_show_logger_message(caplog, sim):
    with parkourpy.logger.show_logger_message(sim.logger):
        sim.logger.debug("debug not shown")
        assert len(caplog.record_tuples) == 0

        sim.logger.info("info now shown")
        assert len(caplog.record_tuples) == 1
        assert "info now shown" in caplog.text

    caplog.clear()

    sim.logger.info("info not shown")
    assert len(caplog.record_tuples) == 0


def test_show_logger_message_lower_level(caplog, sim):
    sim.logger.debug("debug not shown")
    assert len(caplog.record_tuples) == 0

    with parkourpy.logger.show_logger_message(sim.logger, logging.DEBUG):
        sim.logger.debug("debug shown")
        assert len(caplog.record_tuples) == 1
        assert "debug shown" in caplog.text

    caplog.clear()

    sim.logger.debug("debug not shown")
    assert len(caplog.record_tuples) == 0


def test_show_disabled_logger_message(caplog, sim):
    sim.logger.disabled = True

    sim.logger.warning("no warning")
    assert len(caplog.record_tuples) == 0

    with parkourpy.logger.show_logger_message(sim.logger, logging.WARNING):
        sim.logger.warning("warning not shown")
        assert len(caplog.record_tuples) == 0

    with parkourpy.logger.show_logger_message(sim.logger, ignore_disabled=True):
        sim.logger.debug("debug not shown")
        assert len(caplog.record_tuples) == 0

        sim.logger.info("info shown")
        assert len(caplog.record_tuples) == 1
        assert "info shown" in caplog.text

    assert sim.logger.disabled


def test_configure_run_logging(tmp_path):
    log_file = tmp_path / "run.log"
    logger = parkourpy.logger.configure_run_logging("DEBUG", log_file)
    try:
        assert logger.name == "parkourpy"
        assert logger.level == logging.DEBUG
        again = parkourpy.logger.configure_run_logging("DEBUG", log_file)
        files = [h for h in again.handlers if isinstance(h, logging.FileHandler)]
        assert len(files) == 1

        logging.getLogger("parkourpy.trainer").debug("published version 3")
        files[0].flush()
        assert "DEBUG:parkourpy.trainer: published version 3" in log_file.read_text()
    finally:
        for handler in list(logger.handlers):
            if isinstance(handler, logging.FileHandler):
                logger.removeHandler(handler)
                handler.close()
        logger.setLevel(logging.NOTSET)
