"""Iridium available to PEM electrolysis after competing-sector demand.

Competing-sector demand and the iridium price are extrapolated with
damped-trend exponential smoothing. The price forecast is reported but does
not feed back into sector demand.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .series import EUR_PER_KG, T_PER_YR, AnnualSeries, constant

SECTORS = ("electrical", "electrochemical", "chemical", "other")
PRICE_RESPONSIVE = ("electrical", "other")
VARIANT_PHI = {"strong": 0.9, "weak": 0.8}
HISTORY_COLUMNS = ("year", "sector", "demand_t", "price_eur_per_kg")
SUPPLY_METHOD = ("damped-trend reconstruction: electrical and other forecast and capped at "
                 "their last value, chemical and electrochemical held flat, price not fed back")

_GRID = np.round(np.arange(1, 101) * 0.01, 2)


class SupplyError(ValueError):
    pass


@dataclass(frozen=True)
class SectorHistory:
    sector: str
    demand: AnnualSeries
    price: AnnualSeries

    def __post_init__(self):
        if self.sector not in SECTORS:
            raise SupplyError(f"unknown sector {self.sector!r}")
        if len(self.demand) < 5:
            raise SupplyError(f"{self.sector}: need at least 5 years of history")
        if np.any(self.demand.values < 0):
            raise SupplyError(f"{self.sector}: negative demand in history")


@dataclass(frozen=True)
class DampedTrendModel:
    alpha: float
    beta: float
    phi: float
    level: float
    trend: float
    fitted_sse: float
    last_year: int
    unit: str = T_PER_YR

    def __post_init__(self):
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1 and 0 < self.phi <= 1):
            raise SupplyError("alpha, beta and phi must lie in (0, 1]")
        if not (math.isfinite(self.level) and math.isfinite(self.trend)):
            raise SupplyError("non-finite model state")


def damped_trend_filter(y, alpha, beta, phi):
    """Run the smoothing recursions for (broadcastable) parameter arrays.

    Starts from level = y[0], trend = y[1] - y[0] and returns the final level,
    final trend, sum of squared one-step-ahead errors over y[1:], and the
    one-step-ahead fitted values for y[1:].
    """
    y = np.asarray(y, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    shape = np.broadcast(alpha, beta).shape
    level = np.full(shape, y[0])
    trend = np.full(shape, y[1] - y[0])
    sse = np.zeros(shape)
    fitted = []
    for t in range(1, len(y)):
        yhat = level + phi * trend
        fitted.append(yhat)
        err = y[t] - yhat
        sse = sse + err * err
        new_level = alpha * y[t] + (1 - alpha) * yhat
        trend = beta * (new_level - level) + (1 - beta) * phi * trend
        level = new_level
    return level, trend, sse, np.array(fitted)


def fit_damped_trend(history: AnnualSeries, phi: float) -> DampedTrendModel:
    """Fit alpha and beta by grid search (0.01 lattice) on one-step-ahead SSE.

    Ties resolve to the smaller alpha, then the smaller beta.
    """
    if not 0 < phi <= 1:
        raise SupplyError("phi must lie in (0, 1]")
    if len(history) < 5:
        raise SupplyError("need at least 5 observations to fit")
    a, b = np.meshgrid(_GRID, _GRID, indexing="ij")
    level, trend, sse, _ = damped_trend_filter(history.values, a, b, phi)
    best = int(np.argmin(sse))  # row-major: first hit has the smallest alpha, then beta
    i, j = np.unravel_index(best, sse.shape)
    return DampedTrendModel(
        alpha=float(_GRID[i]), beta=float(_GRID[j]), phi=float(phi),
        level=float(level[i, j]), trend=float(trend[i, j]),
        fitted_sse=float(sse[i, j]), last_year=history.end_year, unit=history.unit,
    )


def forecast(model: DampedTrendModel, h: int) -> AnnualSeries:
    """Forecasts for the ``h`` years after the last fitted year."""
    if h < 1:
        raise SupplyError("forecast horizon must be >= 1")
    damp = np.cumsum(model.phi ** np.arange(1, h + 1))
    return AnnualSeries(model.last_year + 1, model.level + damp * model.trend, model.unit)


def forecast_limit(model: DampedTrendModel) -> float:
    if model.phi >= 1:
        return math.copysign(math.inf, model.trend) if model.trend else model.level
    return model.level + model.trend * model.phi / (1 - model.phi)


@dataclass(frozen=True)
class SupplyProjection:
    primary: AnnualSeries
    sector_forecasts: dict
    available_for_pemel: AnnualSeries
    variant: str
    price_forecast: AnnualSeries
    models: dict

    COLUMNS = (
        "year", "primary_t", "electrical_t", "electrochemical_t", "chemical_t",
        "other_t", "available_pemel_t", "price_forecast",
    )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        cols = [self.primary] + [self.sector_forecasts[s] for s in SECTORS] + [
            self.available_for_pemel, self.price_forecast]
        for i, year in enumerate(self.primary.years):
            w.writerow([int(year)] + [format(float(c.values[i]), ".17g") for c in cols])
        return buf.getvalue()


def project_supply(
    histories: list[SectorHistory],
    variant: str,
    horizon: tuple[int, int] = (2024, 2050),
    primary: float = 7.5,
) -> SupplyProjection:
    """Iridium left for PEM electrolysis under the ``strong`` or ``weak`` variant.

    Electrical and other demand follow damped-trend forecasts, floored at zero
    and capped at their last observed value; chemical and electrochemical
    demand stay at their last observed value.
    """
    if variant not in VARIANT_PHI:
        raise SupplyError(f"unknown variant {variant!r}")
    phi = VARIANT_PHI[variant]
    by_sector = {h.sector: h for h in histories}
    missing = [s for s in SECTORS if s not in by_sector]
    if missing:
        raise SupplyError(f"missing sector history: {', '.join(missing)}")
    first, last = horizon
    hist_end = max(h.demand.end_year for h in histories)
    if first <= hist_end:
        raise SupplyError(f"horizon start {first} not after history end {hist_end}")
    if any(h.demand.end_year != hist_end for h in histories):
        raise SupplyError("sector histories must end in the same year")
    steps = last - hist_end

    models = {}
    forecasts = {}
    for sector in SECTORS:
        hist = by_sector[sector].demand
        last_obs = float(hist.values[-1])
        if sector in PRICE_RESPONSIVE:
            model = fit_damped_trend(hist, phi)
            models[sector] = model
            vals = np.clip(forecast(model, steps).values, 0.0, last_obs)
        else:
            vals = np.full(steps, last_obs)
        forecasts[sector] = AnnualSeries(hist_end + 1, vals, T_PER_YR).window(first, last)

    price_hist = by_sector[PRICE_RESPONSIVE[0]].price
    price_model = fit_damped_trend(price_hist, phi)
    models["price"] = price_model
    price = forecast(price_model, last - price_hist.end_year).window(first, last)

    competing = np.sum([forecasts[s].values for s in SECTORS], axis=0)
    avail = np.clip(primary - competing, 0.0, primary)
    return SupplyProjection(
        primary=constant(primary, first, last, T_PER_YR),
        sector_forecasts=forecasts,
        available_for_pemel=AnnualSeries(first, avail, T_PER_YR),
        variant=variant,
        price_forecast=AnnualSeries(first, price.values, EUR_PER_KG),
        models=models,
    )


def validate_history(text: str) -> list[str]:
    """Schema problems in a sector-history CSV; an empty list means valid."""
    errors = []
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    if tuple(header) != HISTORY_COLUMNS:
        return [f"line 1: expected columns {','.join(HISTORY_COLUMNS)}, got {','.join(header)}"]
    years_by_sector = defaultdict(list)
    prices = defaultdict(set)
    for row in reader:
        line = reader.line_num
        try:
            year = int(row["year"])
        except (TypeError, ValueError):
            errors.append(f"line {line}: column year: not an integer: {row['year']!r}")
            continue
        sector = row["sector"]
        if sector not in SECTORS:
            errors.append(f"line {line}: column sector: unknown sector {sector!r}")
            continue
        for col in ("demand_t", "price_eur_per_kg"):
            try:
                v = float(row[col])
            except (TypeError, ValueError):
                errors.append(f"line {line}: column {col}: not a number: {row[col]!r}")
                continue
            if not math.isfinite(v):
                errors.append(f"line {line}: column {col}: non-finite value")
            elif v < 0:
                errors.append(f"line {line}: column {col}: negative value {v}")
            elif col == "price_eur_per_kg":
                prices[year].add(v)
        years_by_sector[sector].append(year)
    missing = [s for s in SECTORS if s not in years_by_sector]
    if missing:
        errors.append(f"sector coverage incomplete: missing {', '.join(missing)}")
    spans = set()
    for sector, years in years_by_sector.items():
        ys = sorted(years)
        if len(set(ys)) != len(ys):
            errors.append(f"sector {sector}: duplicate years")
        elif ys != list(range(ys[0], ys[0] + len(ys))):
            errors.append(f"sector {sector}: years not contiguous")
        elif len(ys) < 5:
            errors.append(f"sector {sector}: fewer than 5 years")
        spans.add((ys[0], ys[-1]))
    if len(spans) > 1:
        errors.append("sectors cover different year ranges")
    for year, vals in sorted(prices.items()):
        if len(vals) > 1:
            errors.append(f"year {year}: inconsistent price across sectors")
    return errors


def load_history(text: str) -> list[SectorHistory]:
    errors = validate_history(text)
    if errors:
        raise SupplyError("; ".join(errors))
    rows = sorted(csv.DictReader(io.StringIO(text)), key=lambda r: (r["sector"], int(r["year"])))
    per = defaultdict(list)
    for r in rows:
        per[r["sector"]].append(r)
    out = []
    for sector in SECTORS:
        rs = per[sector]
        y0 = int(rs[0]["year"])
        demand = AnnualSeries(y0, [float(r["demand_t"]) for r in rs], T_PER_YR)
        price = AnnualSeries(y0, [float(r["price_eur_per_kg"]) for r in rs], EUR_PER_KG)
        out.append(SectorHistory(sector, demand, price))
    return out
