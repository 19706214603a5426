#![allow(dead_code)]

use expvolt::harness::{reward, rule_bootstrap, split_days, DispatchSummary, Environment, RewardConfig};
use expvolt::network::{Branch, Bus, BusKind, NetworkDocument};
use expvolt::scenario::generate_dataset;
use expvolt::{
    CaseInjection, DayProfile, DeviceSpecs, Experience, ExperienceId, ExperienceStore, Forecast,
    Network, OpCountReport,
};
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DATASET_SEED: u64 = 42;
pub const DATASET_DAYS: usize = 120;
pub const TEST_DAYS: usize = 30;
pub const SPLIT_SEED: u64 = 42;
pub const K: usize = 16;
pub const SIGMA: f64 = 0.05;

pub struct Setup {
    pub env: Environment,
    pub train: Vec<DayProfile>,
    pub test: Vec<DayProfile>,
    pub bootstrap: ExperienceStore,
}

pub fn standard_setup() -> Setup {
    let env = Environment::feeder_141();
    let days = generate_dataset(DATASET_SEED, DATASET_DAYS, &env.network);
    let (train, test) = split_days(&days, TEST_DAYS, SPLIT_SEED);
    let bootstrap = rule_bootstrap(&env, &train, K, 0, SIGMA).expect("bootstrap");
    Setup {
        env,
        train,
        test,
        bootstrap,
    }
}

pub fn summary(dev: f64, vio: f64) -> DispatchSummary {
    DispatchSummary {
        v_min_hourly: vec![1.0 - dev; 24],
        v_max_hourly: vec![1.0 + dev; 24],
        deviation: dev,
        violation_rate: vio,
        violating_hours: vec![],
        op_counts: OpCountReport {
            oltc_ops: 0,
            sc_ops: vec![0; 5],
        },
        unconverged_cases: 0,
    }
}

/// A synthetic experience with a consistent reward.
pub fn experience(specs: &DeviceSpecs, context: Forecast, dev: f64, day: u32) -> Experience {
    let results = summary(dev, 0.0);
    Experience {
        id: ExperienceId(0),
        source_day: day,
        context,
        reasoning: format!("synthetic experience for day {day}"),
        actions: specs.static_schedule(),
        reward: reward(&results, &RewardConfig::default()),
        results,
    }
}

pub fn random_forecast(rng: &mut ChaCha8Rng) -> Forecast {
    let load = (0..24).map(|_| rng.random_range(0.5..8.0)).collect();
    let pv = (0..24)
        .map(|h| {
            if (6..20).contains(&h) && rng.random_bool(0.9) {
                rng.random_range(0.0..10.0)
            } else {
                0.0
            }
        })
        .collect();
    Forecast::new(load, pv).unwrap()
}

pub fn random_store(specs: &DeviceSpecs, size: usize, seed: u64) -> ExperienceStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..size)
        .map(|i| {
            let f = random_forecast(&mut rng);
            experience(specs, f, rng.random_range(0.0..0.05), i as u32)
        })
        .collect();
    ExperienceStore::new(specs.clone(), RewardConfig::default(), entries).unwrap()
}

fn bus(id: u32, kind: BusKind) -> Bus {
    Bus {
        id,
        kind,
        p_load_nom: 0.0,
        q_load_nom: 0.0,
        pv_capacity: 0.0,
        sc: None,
    }
}

/// A random tree on `n` buses rooted at bus 1; bus ids are shuffled so the
/// document order is not the sweep order.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Network {
    let mut ids: Vec<u32> = (2..=n as u32).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let mut placed = vec![1u32];
    let mut branches = Vec::new();
    for &id in &ids {
        let parent = placed[rng.random_range(0..placed.len())];
        branches.push(Branch {
            from_bus: parent,
            to_bus: id,
            r: rng.random_range(0.002..0.03),
            x: rng.random_range(0.002..0.03),
        });
        placed.push(id);
    }
    let mut buses = vec![bus(1, BusKind::Slack)];
    buses.extend(ids.iter().map(|&id| bus(id, BusKind::Load)));
    Network::from_document(NetworkDocument {
        name: "random-tree".into(),
        base_mva: 10.0,
        buses,
        branches,
    })
    .unwrap()
}

pub fn random_injection(rng: &mut ChaCha8Rng, net: &Network) -> CaseInjection {
    let n = net.bus_count();
    let mut inj = CaseInjection::zeros(n);
    for i in 0..n {
        if i != net.slack_index() {
            inj.p[i] = rng.random_range(-0.3..0.3);
            inj.q[i] = rng.random_range(-0.3..0.3);
        }
    }
    inj
}

/// Independent power-flow oracle: fixed-point iteration on the reduced
/// bus impedance matrix, `V = V0 + Z (conj(S / V))`.
pub fn fixed_point_voltages(net: &Network, inj: &CaseInjection, v0: f64) -> Vec<f64> {
    let n = net.bus_count();
    let slack = net.slack_index();
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
    for br in net.branches() {
        let a = net.bus_index(br.from_bus).unwrap();
        let b = net.bus_index(br.to_bus).unwrap();
        let yb = Complex::new(1.0, 0.0) / Complex::new(br.r, br.x);
        y[(a, a)] += yb;
        y[(b, b)] += yb;
        y[(a, b)] -= yb;
        y[(b, a)] -= yb;
    }
    let others: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = others.len();
    let ynn = DMatrix::from_fn(m, m, |i, j| y[(others[i], others[j])]);
    let z = ynn.try_inverse().expect("connected tree");
    let v_s = Complex::new(v0, 0.0);
    // With zero injections every bus sits at the slack voltage.
    let mut v = DVector::from_element(m, v_s);
    for _ in 0..10_000 {
        let i = DVector::from_fn(m, |k, _| {
            let s = Complex::new(inj.p[others[k]], inj.q[others[k]]);
            (s / v[k]).conj()
        });
        let next = DVector::from_element(m, v_s) + &z * i;
        let change = (&next - &v).iter().map(|c| c.norm()).fold(0.0, f64::max);
        v = next;
        if change < 1e-14 {
            break;
        }
    }
    let mut out = vec![v0; n];
    for (k, &bus) in others.iter().enumerate() {
        out[bus] = v[k].norm();
    }
    out
}

/// Receiving-end magnitude of a two-bus feeder carrying load `p + jq`
/// through `r + jx` from a sending end at `v0`.
pub fn two_bus_closed_form(v0: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = v0 * v0 - 2.0 * (p * r + q * x);
    let c = (p * p + q * q) * (r * r + x * x);
    ((b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}

pub fn two_bus(r: f64, x: f64) -> Network {
    Network::from_document(NetworkDocument {
        name: "two-bus".into(),
        base_mva: 10.0,
        buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Load)],
        branches: vec![Branch {
            from_bus: 1,
            to_bus: 2,
            r,
            x,
        }],
    })
    .unwrap()
}
