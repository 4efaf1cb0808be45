"""Byte-level KDD line scanner compiled with numba.

Each field is read by a tight loop for its column kind: numeric fields
accumulate digits into a mantissa, nominal and label fields just find the
next separator. Numeric fields holding anything other than digits and a
single dot (signs, exponents, letters) go through the careful ``_number``
routine instead. Nominal and label fields are hashed (FNV-1a)
once their line is complete.

Status codes per row: 0 ok, 1 wrong field count, 2 non-numeric text,
3 needs the Python slow path (exponent or >53-bit mantissa), 4 value out of
column bounds, 5 empty label.
"""

from __future__ import annotations

import numba
import numpy as np

OK, BAD_ARITY, BAD_NUMBER, SLOW_PATH, OUT_OF_RANGE, EMPTY_LABEL = range(6)

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_POW10 = np.array([10.0**k for k in range(23)])
_MAX_EXACT = 1 << 53
_MAX_NOM = 64


@numba.njit(cache=True, nogil=True, inline="always")
def _fnv(buf, start, end):
    h = _FNV_OFFSET
    for i in range(start, end):
        h = (h ^ np.uint64(buf[i])) * _FNV_PRIME
    return h


@numba.njit(cache=True, nogil=True)
def _number(buf, start, end):
    """Strict parse of buf[start:end]; returns (status, value)."""
    i = start
    if i == end:
        return BAD_NUMBER, 0.0
    neg = False
    c = buf[i]
    if c == 45 or c == 43:
        neg = c == 45
        i += 1
    mant = 0
    ndig = 0
    frac = 0
    while i < end and 48 <= buf[i] <= 57:
        if ndig < 18:
            mant = mant * 10 + (buf[i] - 48)
        ndig += 1
        i += 1
    if i < end and buf[i] == 46:
        i += 1
        while i < end and 48 <= buf[i] <= 57:
            if ndig < 18:
                mant = mant * 10 + (buf[i] - 48)
                frac += 1
            ndig += 1
            i += 1
    if ndig == 0:
        return BAD_NUMBER, 0.0
    slow = ndig > 18
    if i < end and (buf[i] == 101 or buf[i] == 69):
        i += 1
        if i < end and (buf[i] == 45 or buf[i] == 43):
            i += 1
        nexp = 0
        while i < end and 48 <= buf[i] <= 57:
            nexp += 1
            i += 1
        if nexp == 0:
            return BAD_NUMBER, 0.0
        slow = True
    if i != end:
        return BAD_NUMBER, 0.0
    if slow or mant > _MAX_EXACT or frac > 22:
        return SLOW_PATH, 0.0
    val = mant / _POW10[frac]
    if neg:
        val = -val
    return OK, val


@numba.njit(cache=True, nogil=True, inline="always")
def _lookup(keys, vals, k, h):
    mask = keys.shape[1] - 1
    slot = np.int64(h & np.uint64(mask))
    while keys[k, slot] != 0:
        if keys[k, slot] == h:
            return vals[k, slot]
        slot = (slot + 1) & mask
    return -1


def build_table(hashes, size: int | None = None):
    """Open-addressing table mapping FNV hashes to their position in ``hashes``."""
    size = size or 1 << max(4, (2 * len(hashes)).bit_length())
    keys = np.zeros(size, dtype=np.uint64)
    vals = np.full(size, -1, dtype=np.int64)
    for i, h in enumerate(hashes):
        slot = h & (size - 1)
        while keys[slot] != 0:
            slot = (slot + 1) & (size - 1)
        keys[slot] = h
        vals[slot] = i
    return keys, vals


@numba.njit(cache=True, nogil=True)
def scan_block(buf, pos, kinds, lo, hi, nom_keys, nom_vals, unseen_code, unseen_count,
               lab_keys, lab_vals, n_labels, new_start, new_end,
               values, labels, status, bad_col, line_of_row):
    """Parse whole lines of ``buf`` from byte ``pos`` until it or the row arrays run out.

    ``buf`` must end with a newline; otherwise nothing is consumed.
    Returns (rows, lines, pos, n_labels): rows emitted, lines consumed
    (blank lines included), the byte offset where scanning stopped, and the
    updated label count. Label ids are assigned in order of first
    appearance; ``new_start``/``new_end`` receive the span of each new label.
    """
    n = buf.shape[0]
    if n == 0 or buf[n - 1] != 10:
        return 0, 0, pos, n_labels
    ncol = kinds.shape[0]
    cap = labels.shape[0]
    lab_mask = lab_keys.shape[0] - 1
    pow10 = _POW10
    nom_start = np.zeros(_MAX_NOM, dtype=np.int64)
    nom_end = np.zeros(_MAX_NOM, dtype=np.int64)
    nom_col = np.zeros(_MAX_NOM, dtype=np.int64)

    row = 0
    line = 0
    while pos < n and row < cap:
        i = pos
        c = buf[i]
        if c == 10 or (c == 13 and buf[i + 1] == 10):
            line += 1
            pos = i + 1 if c == 10 else i + 2
            continue
        st = OK
        bcol = -1
        col = 0
        nom = 0
        lstart = 0
        lend = 0
        while True:
            fstart = i
            c = buf[i]
            if col < ncol and kinds[col] == 0:
                mant = 0
                while c >= 48 and c <= 57:
                    mant = mant * 10 + (np.int64(c) - 48)
                    i += 1
                    c = buf[i]
                ndig = i - fstart
                frac = 0
                if c == 46:
                    i += 1
                    c = buf[i]
                    f0 = i
                    while c >= 48 and c <= 57:
                        mant = mant * 10 + (np.int64(c) - 48)
                        i += 1
                        c = buf[i]
                    frac = i - f0
                    ndig += frac
                if (c == 44 or c == 10) and ndig > 0 and ndig <= 18:
                    if mant > _MAX_EXACT or frac > 22:
                        s, v = SLOW_PATH, 0.0
                    elif frac == 0:
                        s, v = OK, float(mant)
                    else:
                        s, v = OK, mant / pow10[frac]
                else:
                    while c != 44 and c != 10:
                        i += 1
                        c = buf[i]
                    end = i
                    if c == 10 and end > fstart and buf[end - 1] == 13:
                        end -= 1
                    s, v = _number(buf, fstart, end)
                if s == OK and (v < lo[col] or v > hi[col]):
                    s = OUT_OF_RANGE
                if s != OK:
                    if st == OK or (st == SLOW_PATH and s != SLOW_PATH):
                        st = s
                        bcol = col
                values[row, col] = v
            else:
                while c != 44 and c != 10:
                    i += 1
                    c = buf[i]
                end = i
                if c == 10 and end > fstart and buf[end - 1] == 13:
                    end -= 1
                if col < ncol:
                    nom_start[nom] = fstart
                    nom_end[nom] = end
                    nom_col[nom] = col
                    nom += 1
                elif col == ncol:
                    lstart = fstart
                    lend = end
                    if lend > lstart and buf[lend - 1] == 46:
                        lend -= 1
            col += 1
            i += 1
            if c == 10:
                break
        if col != ncol + 1:
            st = BAD_ARITY
            bcol = col
        elif lend == lstart and st != BAD_NUMBER and st != OUT_OF_RANGE:
            st = EMPTY_LABEL
            bcol = ncol
        if st == OK or st == SLOW_PATH:
            for k in range(nom):
                code = _lookup(nom_keys, nom_vals, k, _fnv(buf, nom_start[k], nom_end[k]))
                if code < 0:
                    code = unseen_code[k]
                    unseen_count[k] += 1
                values[row, nom_col[k]] = code
            h = _fnv(buf, lstart, lend)
            slot = np.int64(h & np.uint64(lab_mask))
            lid = -1
            while lab_keys[slot] != 0:
                if lab_keys[slot] == h:
                    lid = lab_vals[slot]
                    break
                slot = (slot + 1) & lab_mask
            if lid < 0:
                lid = n_labels
                lab_keys[slot] = h
                lab_vals[slot] = lid
                new_start[lid] = lstart
                new_end[lid] = lend
                n_labels += 1
            labels[row] = lid
        status[row] = st
        bad_col[row] = bcol
        line_of_row[row] = line
        row += 1
        line += 1
        pos = i
    return row, line, pos, n_labels
