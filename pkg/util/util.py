import os
import csv
import math
import logging
from collections import OrderedDict

import numpy as np


LOGGER_NAME = "main-logger"


def get_logger(level=logging.INFO):
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        fmt = "[%(asctime)s %(levelname)s %(filename)s line %(lineno)d %(process)d] %(message)s"
        handler.setFormatter(logging.Formatter(fmt))
        logger.addHandler(handler)
    return logger


class AverageMeter(object):
    """Computes and stores the average and current value"""
    def __init__(self):
        self.reset()

    def reset(self):
        self.val = 0
        self.avg = 0
        self.sum = 0
        self.count = 0

    def update(self, val, n=1):
        self.val = val
        self.sum += val * n
        self.count += n
        self.avg = self.sum / self.count


def remain_time(seconds):
    t_m, t_s = divmod(seconds, 60)
    t_h, t_m = divmod(t_m, 60)
    return '{:02d}:{:02d}:{:02d}'.format(int(t_h), int(t_m), int(t_s))


def check_makedirs(dir_name):
    if not os.path.exists(dir_name):
        os.makedirs(dir_name)


def format_value(v):
    # shortest decimal that round-trips
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def parse_value(s):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


class Table(object):
    """Column-named rows, the unit of every CSV artifact."""

    def __init__(self, columns, rows=()):
        self.columns = tuple(columns)
        self.rows = [tuple(r) for r in rows]
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError("row has {} entries, table has {} columns".format(len(r), len(self.columns)))

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __eq__(self, other):
        if not isinstance(other, Table) or self.columns != other.columns or len(self) != len(other):
            return False
        for a, b in zip(self.rows, other.rows):
            for x, y in zip(a, b):
                if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
                    continue
                if x != y:
                    return False
        return True

    def row(self, i):
        return OrderedDict(zip(self.columns, self.rows[i]))

    def column(self, name):
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def array(self, columns=None):
        columns = self.columns if columns is None else columns
        idx = [self.columns.index(c) for c in columns]
        return np.array([[float(r[j]) for j in idx] for r in self.rows], dtype=float).reshape(len(self.rows), len(idx))

    def to_csv(self, path):
        d = os.path.dirname(path)
        if d:
            check_makedirs(d)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.columns)
            for r in self.rows:
                writer.writerow([format_value(v) for v in r])
        return path

    @classmethod
    def from_csv(cls, path):
        if not os.path.isfile(path):
            raise (RuntimeError("CSV file does not exist: " + path + "\n"))
        with open(path, newline="") as f:
            reader = csv.reader(f)
            columns = next(reader)
            rows = [[parse_value(v) for v in line] for line in reader if line]
        return cls(columns, rows)

    def __repr__(self):
        return "{}({} rows x {} columns)".format(self.__class__.__name__, len(self.rows), len(self.columns))
