"""Assemble data, fit, bases and cohort from a :class:`RunConfig` and run the engine."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from .cohort import Cohort, CohortState, SumsSpec, generate_sums, load_sums_csv, project_state
from .config import RunConfig
from .errors import InputError
from .market import MarketModel, calibrate_gbm
from .mortality import (DemographicBasis, LeeCarterParams, MortalityDataset, build_basis, fit_lee_carter,
                        load_mortality_dataset, synthetic_dataset)
from .riskengine import (CdrDistribution, ScenarioConfig, ScrReport, TrendSetup, idios_report,
                         scr_from_samples, simulate_idios, simulate_trend)
from .streams import stream
from .valuation import Premium, ValuationBasis, solve_premium

RISKS = ("idios", "trend")


def load_data(cfg: RunConfig) -> MortalityDataset:
    m = cfg.mortality
    if m.data_path is None:
        return synthetic_dataset()
    return load_mortality_dataset(m.data_path, m.format)


@dataclass
class Experiment:
    config: RunConfig

    @cached_property
    def data(self) -> MortalityDataset:
        return load_data(self.config)

    @cached_property
    def params(self) -> LeeCarterParams:
        return fit_lee_carter(self.data)

    @cached_property
    def demographic(self) -> DemographicBasis:
        c = self.config.cohort
        if c.age < self.params.ages[0] or c.age + c.term - 1 > self.params.ages[-1]:
            raise InputError(f"ages {c.age}..{c.age + c.term - 1} are not covered by the mortality data")
        return build_basis(self.params, c.age, c.term, self.config.mortality.stress_factor)

    @cached_property
    def market(self) -> MarketModel:
        k = self.config.market
        return MarketModel(calibrate_gbm(k.mean_growth, k.cov_target, k.cov_horizon, k.u0), k.r, k.i_gar)

    @cached_property
    def cohort(self) -> Cohort:
        c = self.config.cohort
        if c.sums_file is not None:
            sums = load_sums_csv(c.sums_file)
        else:
            spec = SumsSpec(c.sums_mean, c.sums_cov, c.sums_distribution)
            sums = generate_sums(spec, c.size, stream(self.config.simulation.seed, "sums"))
        return Cohort(c.age, c.term, sums, c.premium_mode)

    @cached_property
    def issue_basis(self) -> ValuationBasis:
        return ValuationBasis(self.demographic, self.market, 0, self.market.gbm.u0, self.config.cohort.product)

    @cached_property
    def premium(self) -> Premium:
        return solve_premium(self.cohort, self.issue_basis)

    def equity_at(self, t: int) -> float:
        """Equity price assumed at the start of the CDR year."""
        if self.config.market.equity_at_t == "u0":
            return self.market.gbm.u0
        return float(self.market.gbm.mean(t))

    def state_at(self, t: int) -> CohortState:
        """One realised death history; histories for different t are nested."""
        rng = stream(self.config.simulation.seed, "history")
        return project_state(self.cohort.initial_state(), self.demographic.q2, t, rng)

    def basis_at(self, t: int) -> ValuationBasis:
        return self.issue_basis.at(t, self.equity_at(t))

    def scenario(self, t: int, trend: bool = False) -> ScenarioConfig:
        s = self.config.simulation
        return ScenarioConfig(t, s.n_scenarios, s.seed, s.eta_mode, trend, s.workers)

    def run(self, t: int, risk: str) -> tuple[CdrDistribution, ScrReport]:
        if risk not in RISKS:
            raise InputError(f"unknown risk {risk!r}")
        state, basis = self.state_at(t), self.basis_at(t)
        if risk == "idios":
            dist = simulate_idios(self.scenario(t), state, basis, self.premium)
            return dist, idios_report(dist, state, basis)
        m = self.config.mortality
        setup = TrendSetup(self.params, self.data, m.synthetic_exposure, m.enrichment_k)
        dist = simulate_trend(self.scenario(t, True), state, basis, self.premium, setup)
        return dist, scr_from_samples(dist, t=t, risk="trend")
