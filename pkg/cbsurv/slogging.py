import os
import threading
import time

import numpy as np
from rich.console import Console


class Logger:
    """
    Process-wide run log.

    Every record is one line in the log file, tag first. Nothing is written
    until `init` has been called, so library use stays quiet.
    """

    output_dir: str = None
    log_file = None
    overwrite: bool = False
    log_freq: int = 10
    verbose: bool = False

    console = Console(stderr=True)

    _fit_num = 0
    _lock = threading.Lock()
    _local = threading.local()

    @classmethod
    def init(
        cls, output_dir=".", log_file="cbsurv.log", overwrite=False, log_freq=10, verbose=False
    ):
        cls.output_dir = output_dir
        cls.log_freq = log_freq
        cls.verbose = verbose
        log_path = os.path.join(output_dir, log_file)

        if not overwrite and os.path.exists(log_path):
            raise FileExistsError(f"log file {log_path} exists, pass overwrite to replace it")

        os.makedirs(output_dir, exist_ok=True)
        cls.log_file = open(log_path, "w")

    @classmethod
    def close(cls):
        if cls.log_file is not None:
            cls.log_file.close()
        cls.log_file = None
        cls.verbose = False

    @classmethod
    def _write(cls, tag, *fields):
        if cls.log_file is None:
            return
        line = " ".join([tag, f"{time.time():.3f}"] + [str(f) for f in fields])
        with cls._lock:
            cls.log_file.write(line + "\n")
            cls.log_file.flush()

    @classmethod
    def info(cls, tag, message):
        cls._write(tag, message)
        if cls.verbose:
            cls.console.print(f"[bold]{tag}[/bold] {message}")

    @classmethod
    def warn(cls, message):
        cls._write("WARN", message)
        cls.console.print(f"[yellow]warning:[/yellow] {message}")

    @classmethod
    def fit_start(cls, family, n_rows, n_cols) -> int:
        """Opens a fit trace for the calling thread and returns its id"""
        with cls._lock:
            cls._fit_num += 1
            fit_id = cls._fit_num
        cls._local.fit_id = fit_id
        cls._local.deviances = []
        cls._write("FIT", fit_id, family, n_rows, n_cols)
        return fit_id

    @classmethod
    def iteration(cls, it, deviance, gradient_norm):
        fit_id = getattr(cls._local, "fit_id", 0)
        deviances = getattr(cls._local, "deviances", None)
        if deviances is None:
            deviances = cls._local.deviances = []
        deviances.append(deviance)

        cls._write("ITER", fit_id, it, repr(deviance), repr(gradient_norm))

        if cls.verbose and it > 0 and it % cls.log_freq == 0:
            cls.console.print(
                f"({fit_id} {it}) Deviance: {deviance:.6f} "
                f"(min so far {np.min(deviances):.6f})"
            )

    @classmethod
    def table(cls, table):
        """Prints a rich table to the console, regardless of verbosity"""
        cls.console.print(table)
