# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
Auction outcomes and their CSV form.

Columns: ``winning_bid`` (empty when not sold), ``sold`` (0/1) and the
optional ``atom`` (0/1), ``z``, ``x1``, ``x2``, ``lone`` (0/1) and per-bid
columns ``b1..bk``.
"""
import dataclasses
import enum
import logging
import pathlib
import re

import numpy as np
import pandas as pd

from .common import ValidationError, WinbidException

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("winning_bid", "sold")
BID_COLUMN = re.compile(r"^b(\d+)$")


class IngestError(WinbidException):
    """
    Raised when an outcome file cannot be read.
    """

    exit_code = 4


class OutcomeStatus(enum.Enum):
    NOT_SOLD = "not_sold"
    ATOM = "atom"
    COMPETITIVE = "competitive"


@dataclasses.dataclass(frozen=True)
class OutcomeRecord:
    """
    One auction.

    ``price`` is None when the object is not sold.
    """

    status: OutcomeStatus
    price: float = None
    z: float = None
    covariates: tuple = None
    lone: bool = False


class OutcomeSample:
    """
    Columnar store of auction outcomes.

    :param price: Winning bids, NaN when not sold
    :type price: ``numpy.ndarray``
    :param sold: Sale indicators
    :type sold: ``numpy.ndarray``
    :param atom: Sales at a point mass of the outcome distribution
    :type atom: ``numpy.ndarray``
    :param z: Optional instrument values
    :param covariates: Optional ``(L, 2)`` covariates
    :param lone: Optional single-participant indicators
    :param bids: Optional ``(L, k)`` individual bids, NaN padded
    :param provenance: Simulation config echo or ingestion metadata
    :type provenance: dict
    """

    def __init__(
        self,
        price,
        sold,
        atom=None,
        z=None,
        covariates=None,
        lone=None,
        bids=None,
        provenance=None,
    ):
        self.price = np.asarray(price, dtype=float)
        self.sold = np.asarray(sold, dtype=bool)
        size = self.price.size
        self.atom = np.zeros(size, dtype=bool) if atom is None else np.asarray(atom, dtype=bool)
        self.z = None if z is None else np.asarray(z, dtype=float)
        self.covariates = None if covariates is None else np.asarray(covariates, dtype=float)
        self.lone = None if lone is None else np.asarray(lone, dtype=bool)
        self.bids = None if bids is None else np.asarray(bids, dtype=float)
        self.provenance = dict(provenance or {})
        self.rejected = list(self.provenance.pop("rejected", []))

    def __len__(self):
        return self.price.size

    @property
    def status(self):
        out = np.full(len(self), OutcomeStatus.NOT_SOLD.value, dtype=object)
        out[self.sold & self.atom] = OutcomeStatus.ATOM.value
        out[self.sold & ~self.atom] = OutcomeStatus.COMPETITIVE.value
        return out

    def records(self):
        """
        Iterate over ``OutcomeRecord`` instances.
        """
        for i in range(len(self)):
            if not self.sold[i]:
                status = OutcomeStatus.NOT_SOLD
            elif self.atom[i]:
                status = OutcomeStatus.ATOM
            else:
                status = OutcomeStatus.COMPETITIVE
            yield OutcomeRecord(
                status,
                None if status is OutcomeStatus.NOT_SOLD else float(self.price[i]),
                None if self.z is None else float(self.z[i]),
                None if self.covariates is None else tuple(self.covariates[i]),
                bool(self.lone[i]) if self.lone is not None else False,
            )

    @classmethod
    def from_records(cls, records, provenance=None):
        records = list(records)
        price = [np.nan if r.price is None else r.price for r in records]
        sold = [r.status is not OutcomeStatus.NOT_SOLD for r in records]
        atom = [r.status is OutcomeStatus.ATOM for r in records]
        z = None
        if records and all(r.z is not None for r in records):
            z = [r.z for r in records]
        covariates = None
        if records and all(r.covariates is not None for r in records):
            covariates = [r.covariates for r in records]
        lone = [r.lone for r in records] if any(r.lone for r in records) else None
        return cls(price, sold, atom, z, covariates, lone, provenance=provenance)

    def subset(self, mask):
        """
        Rows selected by a boolean mask.
        """
        mask = np.asarray(mask, dtype=bool)
        pick = lambda a: None if a is None else a[mask]  # noqa: E731
        return OutcomeSample(
            self.price[mask],
            self.sold[mask],
            self.atom[mask],
            pick(self.z),
            pick(self.covariates),
            pick(self.lone),
            pick(self.bids),
            self.provenance,
        )

    def bid_counts(self):
        """
        Number of submitted bids per auction, the non-NaN entries of
        ``b1..bk``.
        """
        if self.bids is None:
            raise ValidationError("bid counts need the b1..bk columns")
        return np.sum(~np.isnan(self.bids), axis=1)

    def with_bid_count(self, count):
        """
        Auctions with exactly ``count`` submitted bids.
        """
        return self.subset(self.bid_counts() == int(count))

    def competitive_prices(self):
        """
        Prices of sales that are not at an atom, lone unknown-N sales
        included.
        """
        return self.price[self.sold & ~self.atom]

    def sold_prices(self):
        return self.price[self.sold]

    def instrument_values(self):
        if self.z is None:
            return np.array([])
        return np.unique(self.z)

    def by_instrument(self):
        """
        Split by distinct instrument value.

        :rtype: dict
        """
        return {float(value): self.subset(self.z == value) for value in self.instrument_values()}

    def frequencies(self):
        """
        Empirical frequencies of not sold, atom and lone sales.
        """
        size = max(len(self), 1)
        lone = 0.0 if self.lone is None else float(np.sum(self.lone)) / size
        return {
            "not_sold": float(np.sum(~self.sold)) / size,
            "atom": float(np.sum(self.sold & self.atom)) / size,
            "lone": lone,
        }

    def to_frame(self):
        frame = pd.DataFrame(
            {
                "winning_bid": np.where(self.sold, self.price, np.nan),
                "sold": self.sold.astype(int),
                "atom": self.atom.astype(int),
            }
        )
        if self.z is not None:
            frame["z"] = self.z
        if self.covariates is not None:
            frame["x1"] = self.covariates[:, 0]
            frame["x2"] = self.covariates[:, 1]
        if self.lone is not None:
            frame["lone"] = self.lone.astype(int)
        if self.bids is not None:
            for j in range(self.bids.shape[1]):
                frame[f"b{j + 1}"] = self.bids[:, j]
        return frame


def write_csv(sample, path):
    """
    Write a sample in the outcome CSV format.

    :return: The path written
    :rtype: ``pathlib.Path``
    """
    path = pathlib.Path(path)
    sample.to_frame().to_csv(path, index=False, na_rep="", lineterminator="\n")
    log.debug("Wrote %d outcomes to %s", len(sample), path)
    return path


def _numeric(frame, column):
    text = frame[column].str.strip()
    values = pd.to_numeric(text.where(text != ""), errors="coerce")
    bad = (text != "") & values.isna()
    return values.to_numpy(dtype=float), (text == "").to_numpy(), bad.to_numpy()


def _flag(frame, column):
    text = frame[column].str.strip()
    return (text == "1").to_numpy(), ~text.isin(["0", "1"]).to_numpy()


def ingest_csv(path, strict=False):
    """
    Read an outcome CSV.

    Malformed rows are dropped and listed in ``sample.rejected`` as
    ``{"row": n, "reason": ...}`` with ``n`` counted from 1 after the header.

    :param path: The file to read
    :type path: str or ``pathlib.Path``
    :param strict: Raise on the first rejected row instead of dropping it
    :type strict: bool

    :raises IngestError: If the file is missing, empty or lacks a required
        column
    :rtype: ``OutcomeSample``
    """
    path = pathlib.Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise IngestError(f"{path}: no such file") from None
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: file is empty") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise IngestError(f"{path}: cannot parse: {exc}") from None
    frame.columns = [str(_).strip() for _ in frame.columns]
    for column in REQUIRED_COLUMNS:
        if column not in frame.columns:
            raise IngestError(f"{path}: missing required column {column!r}")
    if frame.empty:
        raise IngestError(f"{path}: file has a header but no rows")

    size = len(frame)
    reasons = [None] * size

    def reject(mask, reason):
        for i in np.flatnonzero(mask):
            if reasons[i] is None:
                reasons[i] = reason

    price, empty_price, bad_price = _numeric(frame, "winning_bid")
    sold, bad_sold = _flag(frame, "sold")
    reject(bad_price, "winning_bid is not a number")
    reject(bad_sold, "sold must be 0 or 1")
    reject(~sold & ~empty_price & ~bad_sold, "sold=0 with a winning_bid")
    reject(sold & empty_price, "sold=1 without a winning_bid")
    atom = np.zeros(size, dtype=bool)
    if "atom" in frame.columns:
        atom_text = frame["atom"].str.strip()
        atom = (atom_text == "1").to_numpy()
        reject(~atom_text.isin(["0", "1", ""]).to_numpy(), "atom must be 0 or 1")
        reject(atom & ~sold, "atom=1 on a row that is not sold")
    z = None
    if "z" in frame.columns:
        z, empty, bad = _numeric(frame, "z")
        reject(bad | empty, "z is not a number")
    covariates = None
    if "x1" in frame.columns and "x2" in frame.columns:
        columns = []
        for name in ("x1", "x2"):
            values, empty, bad = _numeric(frame, name)
            reject(bad | empty, f"{name} is not a number")
            columns.append(values)
        covariates = np.column_stack(columns)
    lone = None
    if "lone" in frame.columns:
        lone, bad = _flag(frame, "lone")
        reject(bad, "lone must be 0 or 1")
    bid_columns = sorted(
        (int(BID_COLUMN.match(_).group(1)), _) for _ in frame.columns if BID_COLUMN.match(_)
    )
    bids = None
    if bid_columns:
        columns = []
        for _, name in bid_columns:
            values, _empty, bad = _numeric(frame, name)
            reject(bad, f"{name} is not a number")
            columns.append(values)
        bids = np.column_stack(columns)

    rejected = [{"row": i + 1, "reason": reason} for i, reason in enumerate(reasons) if reason]
    if rejected:
        if strict:
            first = rejected[0]
            raise IngestError(f"{path}: row {first['row']}: {first['reason']}")
        log.warning("Rejected %d of %d rows from %s", len(rejected), size, path)
    keep = np.array([reason is None for reason in reasons])
    pick = lambda a: None if a is None else a[keep]  # noqa: E731
    provenance = {"source": "ingest", "path": str(path), "rows": size, "rejected": rejected}
    sample = OutcomeSample(
        np.where(sold, price, np.nan)[keep],
        sold[keep],
        atom[keep],
        pick(z),
        pick(covariates),
        pick(lone),
        pick(bids),
        provenance,
    )
    log.info("Ingested %d outcomes from %s", len(sample), path)
    return sample
