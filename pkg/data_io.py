import os
import csv
import json
import math
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

MISSING_TOKENS = {'', 'na', 'nan', 'null'}


class DataFormatError(Exception):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class DomainMismatchError(Exception):
    pass


@dataclass(frozen=True)
class Dataset:
    """Observations on a shared time grid; NaN marks a component not observed at that time.

    `times` are shifted so the fitting domain starts at 0; `time_offset` undoes the shift.
    """
    times: np.ndarray
    values: np.ndarray
    names: tuple
    time_offset: float = 0.0
    domain: tuple = None

    @property
    def num_components(self):
        return self.values.shape[1]

    @property
    def absolute_times(self):
        return self.times + self.time_offset

    def fit_domain(self):
        if self.domain is not None:
            return self.domain
        return (float(self.times[0]), float(self.times[-1]))


def format_float(value):
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ''
        return f"{value:.17g}"
    if isinstance(value, np.integer):
        return str(int(value))
    return value


def to_serializable(obj):
    if isinstance(obj, dict):
        return {str(k): to_serializable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_serializable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_serializable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


class DataReader(ABC):
    def __init__(self, file_path):
        self.file_path = file_path

        if not os.path.exists(file_path):
            raise FileNotFoundError(f"Input file not found: {file_path}")

    @abstractmethod
    def read_records(self):
        pass


class CSVObservationReader(DataReader):
    """Reads `time,<comp1>,<comp2>,...` files; empty cells and NA are missing."""

    def read_header(self):
        with open(self.file_path, 'r', encoding='utf-8', newline='') as f:
            header = next(csv.reader(f), None)
        if not header:
            raise DataFormatError("file is empty", line_number=1)
        header = [name.strip() for name in header]
        if header[0].lower() != 'time':
            raise DataFormatError(f"first column must be 'time', found '{header[0]}'", line_number=1)
        if len(header) < 2:
            raise DataFormatError("no observation columns after 'time'", line_number=1)
        return header

    def read_records(self):
        header = self.read_header()
        with open(self.file_path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.reader(f)
            next(reader)
            for line_number, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise DataFormatError(
                        f"expected {len(header)} columns, found {len(row)}", line_number=line_number)
                record = {'line': line_number}
                for name, cell in zip(header, row):
                    record[name] = self._parse_cell(name, cell, line_number)
                if math.isnan(record[header[0]]):
                    raise DataFormatError("missing time value", line_number=line_number)
                yield record

    @staticmethod
    def _parse_cell(name, cell, line_number):
        cell = cell.strip()
        if cell.lower() in MISSING_TOKENS:
            return float('nan')
        try:
            value = float(cell)
        except ValueError:
            raise DataFormatError(f"cannot parse '{cell}' in column '{name}' as a number",
                                  line_number=line_number)
        if math.isinf(value):
            raise DataFormatError(f"infinite value in column '{name}'", line_number=line_number)
        return value


def read_dataset(file_path, domain=None):
    reader = create_reader(file_path, 'csv')
    header = reader.read_header()
    time_key, names = header[0], tuple(header[1:])

    times, values, lines = [], [], []
    for record in reader.read_records():
        times.append(record[time_key])
        values.append([record[name] for name in names])
        lines.append(record['line'])
    if not times:
        raise DataFormatError("no observation rows", line_number=2)

    times = np.array(times)
    values = np.array(values, dtype=float)
    for k in range(1, len(times)):
        if times[k] <= times[k - 1]:
            raise DataFormatError(f"times must be strictly increasing ({times[k]} after {times[k - 1]})",
                                  line_number=lines[k])
    for i, name in enumerate(names):
        if not np.any(np.isfinite(values[:, i])):
            raise DataFormatError(f"component '{name}' has no observations")

    if domain is not None:
        t1, tJ = float(domain[0]), float(domain[1])
        if not tJ > t1:
            raise DomainMismatchError(f"Declared domain [{t1}, {tJ}] is empty")
        outside = (times < t1) | (times > tJ)
        if np.any(outside):
            k = int(np.argmax(outside))
            raise DomainMismatchError(
                f"Observation time {times[k]} (line {lines[k]}) lies outside the declared domain [{t1}, {tJ}]")
    else:
        t1, tJ = float(times[0]), float(times[-1])
        if not tJ > t1:
            raise DomainMismatchError("At least two distinct observation times are needed to define a domain")

    logging.info(f"Read {len(times)} observation times for components {', '.join(names)} "
                 f"from {file_path}")
    return Dataset(times=times - t1, values=values, names=names, time_offset=t1, domain=(0.0, tJ - t1))


def write_dataset(file_path, dataset):
    writer = create_writer(file_path, 'csv')
    writer.write_header(['time'] + list(dataset.names))
    for t, row in zip(dataset.absolute_times, dataset.values):
        record = {'time': t}
        record.update({name: value for name, value in zip(dataset.names, row)})
        writer.write_record(record)
    writer.finalize()


class DataWriter(ABC):
    def __init__(self, file_path):
        self.file_path = file_path

        output_dir = os.path.dirname(file_path)
        if output_dir and not os.path.exists(output_dir):
            os.makedirs(output_dir)

    @abstractmethod
    def write_header(self, fields):
        pass

    @abstractmethod
    def write_record(self, record):
        pass

    @abstractmethod
    def finalize(self):
        pass


class CSVWriter(DataWriter):
    def __init__(self, file_path):
        super().__init__(file_path)
        self.file = open(file_path, 'w', encoding='utf-8', newline='')
        self.writer = None
        self.fieldnames = None

    def write_header(self, fields):
        self.fieldnames = list(fields)
        self.writer = csv.DictWriter(self.file, fieldnames=self.fieldnames, extrasaction='ignore')
        self.writer.writeheader()

    def write_record(self, record):
        if not self.writer:
            self.write_header(list(record.keys()))

        new_fields = set(record.keys()) - set(self.fieldnames)
        if new_fields:
            logging.warning(f"Fields not in the table header were dropped: {sorted(new_fields)}")

        row = {field: format_float(record.get(field)) for field in self.fieldnames}
        self.writer.writerow(row)

    def finalize(self):
        self.file.close()


class JSONWriter(DataWriter):
    """Collects records into a list, or writes a single document when `document` is set."""

    def __init__(self, file_path):
        super().__init__(file_path)
        self.records = []
        self.document = None

    def write_header(self, fields):
        pass

    def write_record(self, record):
        self.records.append(to_serializable(record))

    def write_document(self, document):
        self.document = to_serializable(document)

    def finalize(self):
        payload = self.document if self.document is not None else self.records
        with open(self.file_path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, ensure_ascii=False)


def create_reader(file_path, format='csv'):
    if format.lower() == 'csv':
        return CSVObservationReader(file_path)
    else:
        raise ValueError(f"Unsupported input format: {format}")


def create_writer(file_path, format):
    if format.lower() == 'csv':
        return CSVWriter(file_path)
    elif format.lower() == 'json':
        return JSONWriter(file_path)
    else:
        raise ValueError(f"Unsupported output format: {format}")


def write_table(file_path, fields, records):
    writer = create_writer(file_path, 'csv')
    writer.write_header(fields)
    for record in records:
        writer.write_record(record)
    writer.finalize()
    logging.info(f"Wrote {len(records)} rows to {file_path}")


def write_json(file_path, document):
    writer = create_writer(file_path, 'json')
    writer.write_document(document)
    writer.finalize()
    logging.info(f"Wrote {file_path}")
