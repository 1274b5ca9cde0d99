//! Multi-period battery schedule on a discretised state-of-charge grid.
//!
//! Per period the candidate moves are tried in a fixed order: idle, charge
//! (smallest step first), discharge (smallest step first). Among schedules
//! within `1e-9` of the optimum the first in that order, period by period,
//! wins. The dynamic program and the exhaustive search share this rule.

use super::{Action, BatteryConfig, TradePlan};
use crate::error::{Error, Result};
use crate::quantile::QuantileForecast;

const TIE: f64 = 1e-9;
const BRUTE_MAX_HORIZON: usize = 8;

/// Evenly spaced SoC levels from `min_soc` to `capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocGrid {
    min: f64,
    step: f64,
    n: usize,
}

impl SocGrid {
    pub fn new(battery: &BatteryConfig, soc_steps: usize) -> Result<Self> {
        battery.validate()?;
        if soc_steps < 2 {
            return Err(Error::Config(format!("soc_steps must be >= 2, got {soc_steps}")));
        }
        let span = battery.capacity - battery.min_soc;
        if span <= 0.0 {
            return Ok(Self { min: battery.min_soc, step: 0.0, n: 1 });
        }
        Ok(Self {
            min: battery.min_soc,
            step: span / (soc_steps - 1) as f64,
            n: soc_steps,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn level(&self, k: usize) -> f64 {
        self.min + k as f64 * self.step
    }

    fn index(&self, soc: f64) -> Option<usize> {
        if self.step == 0.0 {
            return Some(0);
        }
        let k = ((soc - self.min) / self.step).round();
        if k < 0.0 || k as usize >= self.n || (self.level(k as usize) - soc).abs() > 1e-9 {
            return None;
        }
        Some(k as usize)
    }

    /// Nearest grid level.
    pub fn snap(&self, soc: f64) -> f64 {
        if self.step == 0.0 {
            return self.min;
        }
        let k = ((soc - self.min) / self.step).round().clamp(0.0, (self.n - 1) as f64);
        self.level(k as usize)
    }

    fn start(&self, battery: &BatteryConfig) -> Result<usize> {
        self.index(battery.initial_soc).ok_or_else(|| {
            Error::Config(format!(
                "initial_soc {} is not on the state-of-charge grid (step {})",
                battery.initial_soc, self.step
            ))
        })
    }
}

struct Problem<'a> {
    grid: SocGrid,
    buy: &'a [f64],
    sell: &'a [f64],
    battery: &'a BatteryConfig,
}

impl Problem<'_> {
    fn new<'a>(buy: &'a [f64], sell: &'a [f64], battery: &'a BatteryConfig, soc_steps: usize) -> Result<Problem<'a>> {
        if buy.len() != sell.len() {
            return Err(Error::Shape("buy and sell price paths differ in length".into()));
        }
        if buy.iter().chain(sell).any(|p| !p.is_finite()) {
            return Err(Error::Shape("non-finite planning price".into()));
        }
        Ok(Problem {
            grid: SocGrid::new(battery, soc_steps)?,
            buy,
            sell,
            battery,
        })
    }

    /// Moves from level `k` in preference order: target level and action.
    fn moves(&self, k: usize) -> Vec<(usize, Action)> {
        let g = &self.grid;
        let mut out = vec![(k, Action::Idle)];
        for j in k + 1..g.n {
            let e = (j - k) as f64 * g.step;
            if e > self.battery.max_charge + TIE {
                break;
            }
            out.push((j, Action::Charge(e)));
        }
        for j in (0..k).rev() {
            let e = (k - j) as f64 * g.step;
            if e > self.battery.max_discharge + TIE {
                break;
            }
            out.push((j, Action::Discharge(e)));
        }
        out
    }

    fn reward(&self, t: usize, a: Action) -> f64 {
        match a {
            Action::Idle => 0.0,
            Action::Charge(e) => -(e / self.battery.eta_c * self.buy[t]),
            Action::Discharge(e) => self.battery.eta_d * e * self.sell[t],
        }
    }
}

/// Dynamic program over periods and SoC levels with buy and sell prices
/// given separately.
pub fn ts2_plan_priced(buy: &[f64], sell: &[f64], battery: &BatteryConfig, soc_steps: usize) -> Result<TradePlan> {
    let pb = Problem::new(buy, sell, battery, soc_steps)?;
    let h = buy.len();
    let n = pb.grid.len();
    let k0 = pb.grid.start(battery)?;
    let moves: Vec<Vec<(usize, Action)>> = (0..n).map(|k| pb.moves(k)).collect();

    let mut value = vec![vec![0.0; n]; h + 1];
    for t in (0..h).rev() {
        for k in 0..n {
            value[t][k] = moves[k]
                .iter()
                .map(|&(j, a)| pb.reward(t, a) + value[t + 1][j])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }

    let mut actions = Vec::with_capacity(h);
    let mut k = k0;
    for t in 0..h {
        let target = value[t][k] - TIE;
        let &(j, a) = moves[k]
            .iter()
            .find(|&&(j, a)| pb.reward(t, a) + value[t + 1][j] >= target)
            .expect("the maximiser itself qualifies");
        actions.push(a);
        k = j;
    }
    Ok(TradePlan { actions })
}

/// Multi-period plan priced on the median forecast.
pub fn ts2_plan(forecast: &QuantileForecast, battery: &BatteryConfig, soc_steps: usize) -> Result<TradePlan> {
    let m = forecast
        .level_series(0.5)
        .ok_or_else(|| Error::Config("multi-period strategy needs the 0.5 quantile".into()))?;
    ts2_plan_priced(&m, &m, battery, soc_steps)
}

/// Exhaustive search over every move sequence on the SoC grid.
pub fn brute_force_plan_priced(buy: &[f64], sell: &[f64], battery: &BatteryConfig, soc_steps: usize) -> Result<TradePlan> {
    if buy.len() > BRUTE_MAX_HORIZON {
        return Err(Error::Config(format!(
            "exhaustive search refuses horizons above {BRUTE_MAX_HORIZON}, got {}",
            buy.len()
        )));
    }
    let pb = Problem::new(buy, sell, battery, soc_steps)?;
    let k0 = pb.grid.start(battery)?;

    fn walk(pb: &Problem, t: usize, k: usize, acc: f64, seq: &mut Vec<Action>, visit: &mut dyn FnMut(f64, &[Action])) {
        if t == pb.buy.len() {
            visit(acc, seq);
            return;
        }
        for (j, a) in pb.moves(k) {
            seq.push(a);
            walk(pb, t + 1, j, acc + pb.reward(t, a), seq, visit);
            seq.pop();
        }
    }

    let mut best = f64::NEG_INFINITY;
    walk(&pb, 0, k0, 0.0, &mut Vec::new(), &mut |v, _| best = best.max(v));
    let mut chosen: Option<Vec<Action>> = None;
    walk(&pb, 0, k0, 0.0, &mut Vec::new(), &mut |v, s| {
        if chosen.is_none() && v >= best - TIE {
            chosen = Some(s.to_vec());
        }
    });
    Ok(TradePlan {
        actions: chosen.expect("at least the idle schedule exists"),
    })
}

pub fn brute_force_plan(prices: &[f64], battery: &BatteryConfig, soc_steps: usize) -> Result<TradePlan> {
    brute_force_plan_priced(prices, prices, battery, soc_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::QuantileGrid;
    use crate::trading::settle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn med(m: &[f64]) -> QuantileForecast {
        QuantileForecast::new(QuantileGrid::new(vec![0.5]).unwrap(), m.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn two_period_hand_case() {
        let b = BatteryConfig::default();
        let plan = ts2_plan(&med(&[10.0, 50.0]), &b, 11).unwrap();
        assert_eq!(plan.actions, vec![Action::Charge(1.0), Action::Discharge(1.0)]);
        let expect = 0.8 * 50.0 - 10.0 / 0.98;
        assert!((plan.value(&[10.0, 50.0], &b) - expect).abs() < 1e-9);
        assert!((settle(&plan, &[10.0, 50.0], &b).unwrap().profit - expect).abs() < 1e-9);
    }

    #[test]
    fn flat_and_falling_prices_idle() {
        let b = BatteryConfig::default();
        assert!(ts2_plan(&med(&[20.0; 6]), &b, 11).unwrap().is_idle());
        for h in 1..=6 {
            let falling: Vec<f64> = (0..h).map(|i| 100.0 - 7.0 * i as f64).collect();
            assert!(ts2_plan(&med(&falling), &b, 11).unwrap().is_idle());
            assert!(brute_force_plan(&falling, &b, 5).unwrap().is_idle());
        }
    }

    #[test]
    fn brute_force_edges() {
        let b = BatteryConfig::default();
        assert!(brute_force_plan(&[42.0], &b, 5).unwrap().is_idle());
        let empty = BatteryConfig { capacity: 0.0, ..Default::default() };
        assert!(brute_force_plan(&[1.0, 90.0, 3.0], &empty, 5).unwrap().is_idle());
        assert!(ts2_plan(&med(&[1.0, 90.0, 3.0]), &empty, 5).unwrap().is_idle());
        assert!(matches!(brute_force_plan(&[1.0; 9], &b, 3), Err(Error::Config(_))));
        assert!(matches!(ts2_plan(&med(&[1.0]), &b, 1), Err(Error::Config(_))));
    }

    #[test]
    fn dp_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let h = rng.random_range(1..=6);
            let steps = rng.random_range(2..=5);
            let prices: Vec<f64> = (0..h).map(|_| rng.random_range(-20.0..120.0)).collect();
            let b = BatteryConfig {
                max_charge: rng.random_range(0.2..1.0),
                max_discharge: rng.random_range(0.2..1.0),
                ..Default::default()
            };
            let dp = ts2_plan_priced(&prices, &prices, &b, steps).unwrap();
            let bf = brute_force_plan(&prices, &b, steps).unwrap();
            assert_eq!(dp.value(&prices, &b), bf.value(&prices, &b));
            dp.soc_path(&b).unwrap();
        }
    }

    #[test]
    fn partial_rates_respected() {
        let b = BatteryConfig { max_charge: 0.3, max_discharge: 0.5, ..Default::default() };
        let plan = ts2_plan(&med(&[5.0, 6.0, 7.0, 90.0, 95.0]), &b, 11).unwrap();
        let path = plan.soc_path(&b).unwrap();
        assert!(path.iter().all(|&s| (-1e-9..=1.0 + 1e-9).contains(&s)));
        assert!(!plan.is_idle());
    }

    #[test]
    fn off_grid_initial_soc_rejected() {
        let b = BatteryConfig { initial_soc: 0.55, ..Default::default() };
        assert!(matches!(ts2_plan(&med(&[1.0, 2.0]), &b, 11), Err(Error::Config(_))));
    }
}
