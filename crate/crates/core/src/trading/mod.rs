//! Battery arbitrage on quantile price forecasts.
//!
//! Actions are battery-side energies. Charging `e` draws `e / eta_c` from the
//! grid at the period price; discharging `e` delivers `eta_d * e` to the grid.

mod plan;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use plan::{brute_force_plan, brute_force_plan_priced, ts2_plan, ts2_plan_priced, SocGrid};

use crate::error::{Error, Result};
use crate::quantile::QuantileForecast;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    /// MWh
    pub capacity: f64,
    /// MWh per period, battery side.
    pub max_charge: f64,
    pub max_discharge: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub min_soc: f64,
    pub initial_soc: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            capacity: 1.0,
            max_charge: 1.0,
            max_discharge: 1.0,
            eta_c: 0.98,
            eta_d: 0.8,
            min_soc: 0.0,
            initial_soc: 0.0,
        }
    }
}

impl BatteryConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.capacity, self.max_charge, self.max_discharge, self.eta_c, self.eta_d, self.min_soc, self.initial_soc]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("battery parameters must be finite".into()));
        }
        if !(0.0 <= self.min_soc && self.min_soc <= self.initial_soc && self.initial_soc <= self.capacity) {
            return Err(Error::Config(format!(
                "battery needs 0 <= min_soc ({}) <= initial_soc ({}) <= capacity ({})",
                self.min_soc, self.initial_soc, self.capacity
            )));
        }
        if !(self.max_charge > 0.0 && self.max_discharge > 0.0) {
            return Err(Error::Config("battery charge and discharge rates must be > 0".into()));
        }
        for (name, eta) in [("eta_c", self.eta_c), ("eta_d", self.eta_d)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("battery {name} = {eta} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Same battery with every energy quantity multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            capacity: self.capacity * k,
            max_charge: self.max_charge * k,
            max_discharge: self.max_discharge * k,
            min_soc: self.min_soc * k,
            initial_soc: self.initial_soc * k,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "mwh", rename_all = "lowercase")]
pub enum Action {
    Idle,
    Charge(f64),
    Discharge(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradePlan {
    pub actions: Vec<Action>,
}

impl TradePlan {
    pub fn idle(horizon: usize) -> Self {
        Self {
            actions: vec![Action::Idle; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn is_idle(&self) -> bool {
        self.actions.iter().all(|a| *a == Action::Idle)
    }

    /// SoC after each period; errors if a bound or rate is broken.
    pub fn soc_path(&self, battery: &BatteryConfig) -> Result<Vec<f64>> {
        let mut soc = battery.initial_soc;
        let mut path = Vec::with_capacity(self.actions.len());
        for (t, a) in self.actions.iter().enumerate() {
            match *a {
                Action::Idle => {}
                Action::Charge(e) => {
                    if !(e >= 0.0) || e > battery.max_charge + TOL {
                        return Err(Error::Feasibility(format!("period {t}: charge {e} breaks rate limit")));
                    }
                    soc += e;
                }
                Action::Discharge(e) => {
                    if !(e >= 0.0) || e > battery.max_discharge + TOL {
                        return Err(Error::Feasibility(format!("period {t}: discharge {e} breaks rate limit")));
                    }
                    soc -= e;
                }
            }
            if soc < battery.min_soc - TOL || soc > battery.capacity + TOL {
                return Err(Error::Feasibility(format!(
                    "period {t}: state of charge {soc} outside [{}, {}]",
                    battery.min_soc, battery.capacity
                )));
            }
            path.push(soc);
        }
        Ok(path)
    }

    /// Profit of the plan if bought at `buy[t]` and sold at `sell[t]`.
    pub fn value_priced(&self, buy: &[f64], sell: &[f64], battery: &BatteryConfig) -> f64 {
        let mut total = 0.0;
        for (t, a) in self.actions.iter().enumerate() {
            match *a {
                Action::Idle => {}
                Action::Charge(e) => total -= e / battery.eta_c * buy[t],
                Action::Discharge(e) => total += battery.eta_d * e * sell[t],
            }
        }
        total
    }

    pub fn value(&self, prices: &[f64], battery: &BatteryConfig) -> f64 {
        self.value_priced(prices, prices, battery)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub period: usize,
    pub side: Side,
    pub grid_energy_mwh: f64,
    pub price: f64,
    /// Negative when buying.
    pub cash: f64,
    pub soc_after: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TradeLedger {
    pub records: Vec<TradeRecord>,
    pub profit: f64,
}

/// Execute a plan against realised prices.
pub fn settle(plan: &TradePlan, realized: &[f64], battery: &BatteryConfig) -> Result<TradeLedger> {
    if realized.len() < plan.horizon() {
        return Err(Error::Alignment(format!(
            "plan spans {} periods, only {} realised prices",
            plan.horizon(),
            realized.len()
        )));
    }
    let path = plan.soc_path(battery)?;
    let mut records = Vec::new();
    for (t, a) in plan.actions.iter().enumerate() {
        let price = realized[t];
        let (side, grid) = match *a {
            Action::Idle => continue,
            Action::Charge(e) => (Side::Buy, e / battery.eta_c),
            Action::Discharge(e) => (Side::Sell, battery.eta_d * e),
        };
        if grid == 0.0 {
            continue;
        }
        let cash = match side {
            Side::Buy => -grid * price,
            Side::Sell => grid * price,
        };
        records.push(TradeRecord {
            period: t,
            side,
            grid_energy_mwh: grid,
            price,
            cash,
            soc_after: path[t],
        });
    }
    let profit = records.iter().map(|r| r.cash).sum::<f64>() + 0.0;
    Ok(TradeLedger { records, profit })
}

/// Risk filter for the single-trade strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ts1Risk {
    pub filter: bool,
    /// `alpha_r`: the trade must pay off selling at the `alpha_r` quantile
    /// and buying at the `1 - alpha_r` quantile.
    pub act_level: f64,
}

impl Default for Ts1Risk {
    fn default() -> Self {
        Self {
            filter: false,
            act_level: 0.1,
        }
    }
}

fn level(forecast: &QuantileForecast, p: f64) -> Result<Vec<f64>> {
    forecast
        .level_series(p)
        .ok_or_else(|| Error::Config(format!("trading needs the {p} quantile in the forecast grid")))
}

/// One buy followed by one sell, chosen on the median forecast.
pub fn ts1_plan(forecast: &QuantileForecast, battery: &BatteryConfig, risk: Ts1Risk) -> Result<TradePlan> {
    battery.validate()?;
    let h = forecast.len();
    if h < 2 {
        return Err(Error::Config(format!("single-trade strategy needs a horizon of at least 2, got {h}")));
    }
    let m = level(forecast, 0.5)?;
    let spread = |b: usize, s: usize, buy: &[f64], sell: &[f64]| battery.eta_d * sell[s] - buy[b] / battery.eta_c;
    let mut best: Option<(usize, usize, f64)> = None;
    for b in 0..h {
        for s in b + 1..h {
            let v = spread(b, s, &m, &m);
            if best.is_none_or(|(_, _, bv)| v > bv) {
                best = Some((b, s, v));
            }
        }
    }
    let (b, s, v) = best.expect("horizon >= 2");
    if !(v > 0.0) {
        return Ok(TradePlan::idle(h));
    }
    if risk.filter {
        let a = risk.act_level;
        if !(a > 0.0 && a < 0.5) {
            return Err(Error::Config(format!("risk act_level {a} outside (0, 0.5)")));
        }
        let lo = level(forecast, a)?;
        let hi = level(forecast, 1.0 - a)?;
        if !(spread(b, s, &hi, &lo) > 0.0) {
            return Ok(TradePlan::idle(h));
        }
    }
    let volume = (battery.capacity - battery.initial_soc)
        .min(battery.max_charge)
        .min(battery.max_discharge);
    if !(volume > 0.0) {
        return Ok(TradePlan::idle(h));
    }
    let mut plan = TradePlan::idle(h);
    plan.actions[b] = Action::Charge(volume);
    plan.actions[s] = Action::Discharge(volume);
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ts1,
    Ts2,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ts1 => "ts1",
            Strategy::Ts2 => "ts2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    /// Plan once per window and execute every action.
    #[default]
    Commit,
    /// Re-plan over the remaining window each period, executing only the
    /// first action.
    Receding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradingParams {
    pub strategies: Vec<Strategy>,
    pub soc_steps: usize,
    pub risk: Ts1Risk,
    /// Price the multi-period plan at `q^(1-a)` for buys and `q^a` for sells.
    pub quantile_adjusted: bool,
    pub adjust_level: f64,
    pub execution: Execution,
}

impl Default for TradingParams {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Ts1, Strategy::Ts2],
            soc_steps: 11,
            risk: Ts1Risk::default(),
            quantile_adjusted: false,
            adjust_level: 0.1,
            execution: Execution::Commit,
        }
    }
}

fn ts2_prices(forecast: &QuantileForecast, params: &TradingParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.quantile_adjusted {
        let a = params.adjust_level;
        if !(a > 0.0 && a < 0.5) {
            return Err(Error::Config(format!("adjust_level {a} outside (0, 0.5)")));
        }
        Ok((level(forecast, 1.0 - a)?, level(forecast, a)?))
    } else {
        let m = level(forecast, 0.5)?;
        Ok((m.clone(), m))
    }
}

/// Plan one window with a strategy and settle it at the realised prices.
pub fn trade_window(
    strategy: Strategy,
    forecast: &QuantileForecast,
    realized: &[f64],
    battery: &BatteryConfig,
    params: &TradingParams,
) -> Result<TradeLedger> {
    let plan = match (strategy, params.execution) {
        (Strategy::Ts1, _) => ts1_plan(forecast, battery, params.risk)?,
        (Strategy::Ts2, Execution::Commit) => {
            let (buy, sell) = ts2_prices(forecast, params)?;
            ts2_plan_priced(&buy, &sell, battery, params.soc_steps)?
        }
        (Strategy::Ts2, Execution::Receding) => {
            let (buy, sell) = ts2_prices(forecast, params)?;
            receding_plan(&buy, &sell, battery, params.soc_steps)?
        }
    };
    settle(&plan, realized, battery)
}

/// Receding-horizon execution of the multi-period plan.
pub fn receding_plan(buy: &[f64], sell: &[f64], battery: &BatteryConfig, soc_steps: usize) -> Result<TradePlan> {
    let mut current = battery.clone();
    let mut actions = Vec::with_capacity(buy.len());
    for t in 0..buy.len() {
        let plan = ts2_plan_priced(&buy[t..], &sell[t..], &current, soc_steps)?;
        let first = plan.actions[0];
        let grid = SocGrid::new(battery, soc_steps)?;
        match first {
            Action::Idle => {}
            Action::Charge(e) => current.initial_soc = grid.snap(current.initial_soc + e),
            Action::Discharge(e) => current.initial_soc = grid.snap(current.initial_soc - e),
        }
        actions.push(first);
    }
    Ok(TradePlan { actions })
}

/// Write ledgers as CSV rows `window_start, period, side, grid_energy_mwh,
/// price, cash, soc_after`, preceded by an optional `# comment` line.
pub fn write_ledger_csv<W: Write>(windows: &[(String, &TradeLedger)], mut out: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| Error::io("<ledger>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window_start", "period", "side", "grid_energy_mwh", "price", "cash", "soc_after"])?;
    for (start, ledger) in windows {
        for r in &ledger.records {
            w.write_record([
                start.clone(),
                r.period.to_string(),
                match r.side {
                    Side::Buy => "buy".to_string(),
                    Side::Sell => "sell".to_string(),
                },
                r.grid_energy_mwh.to_string(),
                r.price.to_string(),
                r.cash.to_string(),
                r.soc_after.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<ledger>", e))?;
    Ok(())
}
