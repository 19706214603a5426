mod common;

use common::{random_forecast, random_store};
use expvolt::agent::{
    decide, modification_loop, update_store, AgentResponse, CallContext, Message, SequenceBackend,
    Templates, TranscriptLog,
};
use expvolt::harness::simulate_day;
use expvolt::retrieval::{RetrievalResult, ScoredMatch};
use expvolt::scenario::generate_dataset;
use expvolt::{ActionSchedule, DayProfile, Environment, ExperienceId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn answer(actions: &ActionSchedule) -> String {
    format!("Keeping it simple.\n```json\n{}\n```", actions.to_json())
}

fn ctx() -> CallContext {
    CallContext {
        episode_id: "test".into(),
        round: 0,
    }
}

fn with_taps(env: &Environment, f: impl Fn(usize) -> usize) -> ActionSchedule {
    let mut s = env.devices.static_schedule();
    for (h, t) in s.oltc_tap.iter_mut().enumerate() {
        *t = f(h);
    }
    s
}

/// The sunniest of a handful of generated days.
fn sunny_day(env: &Environment) -> DayProfile {
    generate_dataset(11, 12, &env.network)
        .into_iter()
        .max_by(|a, b| a.peak_pv().total_cmp(&b.peak_pv()))
        .unwrap()
}

#[test]
fn decide_accepts_a_valid_first_answer() {
    let env = Environment::feeder_141();
    let schedule = with_taps(&env, |_| 5);
    let backend = SequenceBackend::new([answer(&schedule)]);
    let mut messages = vec![Message::user("plan tomorrow")];
    let r = decide(&backend, &ctx(), &mut messages, &env.devices, &Templates::builtin(), 2, &TranscriptLog::disabled()).unwrap();
    assert_eq!(r.actions, schedule);
    assert_eq!(r.reasoning, "Keeping it simple.");
    assert_eq!(messages.len(), 2);
}

#[test]
fn decide_repairs_then_succeeds() {
    let env = Environment::feeder_141();
    let schedule = with_taps(&env, |_| 4);
    let backend = SequenceBackend::new(["no idea".to_string(), "```json\n{\"oltc_tap\": [12]}\n```".into(), answer(&schedule)]);
    let log = TranscriptLog::new();
    let mut messages = vec![Message::user("plan tomorrow")];
    let r = decide(&backend, &ctx(), &mut messages, &env.devices, &Templates::builtin(), 2, &log).unwrap();
    assert_eq!(r.actions, schedule);
    // prompt, then three answers with two repair requests between them
    assert_eq!(messages.len(), 6);
    assert!(matches!(messages[2].role, expvolt::agent::Role::User));
    assert_eq!(log.len(), 6);
}

#[test]
fn decide_gives_up_after_the_retry_budget() {
    let env = Environment::feeder_141();
    let backend = SequenceBackend::new(["a", "b", "c", "d"]);
    let mut messages = vec![Message::user("plan tomorrow")];
    let err = decide(&backend, &ctx(), &mut messages, &env.devices, &Templates::builtin(), 2, &TranscriptLog::disabled()).unwrap_err();
    assert_eq!(err.attempts, 3);
    assert_eq!(backend.remaining(), 1);
}

#[test]
fn decide_rejects_schedules_over_the_op_limit() {
    let env = Environment::feeder_141();
    let zigzag = with_taps(&env, |h| 4 + h % 2);
    let backend = SequenceBackend::new([answer(&zigzag)]);
    let mut messages = vec![Message::user("plan tomorrow")];
    assert!(decide(&backend, &ctx(), &mut messages, &env.devices, &Templates::builtin(), 0, &TranscriptLog::disabled()).is_err());
}

#[test]
fn backend_errors_are_not_retried() {
    let env = Environment::feeder_141();
    let backend = SequenceBackend::new(Vec::<String>::new());
    let mut messages = vec![Message::user("plan tomorrow")];
    let err = decide(&backend, &ctx(), &mut messages, &env.devices, &Templates::builtin(), 5, &TranscriptLog::disabled()).unwrap_err();
    assert_eq!(err.attempts, 1);
}

fn run_loop(env: &Environment, day: &DayProfile, initial: ActionSchedule, answers: Vec<String>, rounds: usize) -> expvolt::agent::ModificationOutcome {
    let backend = SequenceBackend::new(answers);
    let initial = AgentResponse {
        reasoning: String::new(),
        actions: initial,
    };
    modification_loop(&backend, "ep", env, day, initial, vec![Message::user("plan")], rounds, &Templates::builtin(), 1, &TranscriptLog::disabled()).unwrap()
}

#[test]
fn zero_rounds_keeps_the_initial_decision() {
    let env = Environment::feeder_141();
    let day = sunny_day(&env);
    let initial = with_taps(&env, |_| 5);
    let out = run_loop(&env, &day, initial.clone(), vec![], 0);
    assert_eq!(out.best.round, 0);
    assert_eq!(out.best.response.actions, initial);
    assert_eq!(out.state.candidates.len(), 1);
    assert_eq!(out.best.reward, env.reward_of(&simulate_day(&env, &day, &initial).unwrap()));
}

#[test]
fn worse_proposals_never_replace_the_initial_decision() {
    let env = Environment::feeder_141();
    let day = sunny_day(&env);
    let initial = with_taps(&env, |_| 5);
    let bad = with_taps(&env, |_| 10);
    let worse = with_taps(&env, |_| 0);
    let out = run_loop(&env, &day, initial.clone(), vec![answer(&bad), answer(&worse), answer(&bad)], 3);
    assert_eq!(out.state.candidates.len(), 4);
    assert_eq!(out.best.round, 0);
    assert_eq!(out.best.response.actions, initial);
    assert!(out.state.candidates.iter().all(|c| c.reward <= out.best.reward));
}

#[test]
fn fixing_the_violating_hours_is_kept() {
    let env = Environment::feeder_141();
    let day = sunny_day(&env);
    let initial = with_taps(&env, |_| 5);
    let base = simulate_day(&env, &day, &initial).unwrap();
    let hot: Vec<usize> = (0..24).filter(|&h| base.v_max_hourly[h] > env.reward.v_hi).collect();
    assert!(!hot.is_empty(), "the sunny day should overvolt at a fixed tap");
    let (first, last) = (hot[0], hot[hot.len() - 1]);
    let fixed = with_taps(&env, |h| if (first..=last).contains(&h) { 3 } else { 5 });
    let out = run_loop(&env, &day, initial, vec![answer(&fixed), answer(&with_taps(&env, |_| 0))], 2);
    assert_eq!(out.best.round, 1);
    assert!(out.best.reward > out.state.candidates[0].reward);
    assert!(out.best.summary.violation_rate < base.violation_rate);
}

#[test]
fn failed_rounds_leave_no_trace_in_the_transcript() {
    let env = Environment::feeder_141();
    let day = sunny_day(&env);
    let initial = with_taps(&env, |_| 5);
    let answers = vec!["x".to_string(), "y".into(), answer(&with_taps(&env, |_| 4))];
    let out = run_loop(&env, &day, initial, answers, 2);
    assert_eq!(out.failed_rounds, vec![1]);
    assert_eq!(out.state.candidates.len(), 2);
    assert_eq!(out.state.candidates[1].round, 2);
    // prompt, then round 2's feedback and answer
    assert_eq!(out.state.transcript.len(), 3);
}

fn matched(ids: &[u64]) -> RetrievalResult {
    RetrievalResult {
        profile_matches: ids.iter().map(|&i| ScoredMatch { id: ExperienceId(i), score: 1.0 }).collect(),
        statistical_matches: vec![],
    }
}

#[test]
fn update_replaces_the_worst_beaten_retrieved_entry() {
    let env = Environment::feeder_141();
    let mut store = random_store(&env.devices, 10, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut by_reward: Vec<_> = store.entries().iter().map(|e| (e.reward, e.id)).collect();
    by_reward.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (worst, best) = (by_reward[0], by_reward[9]);
    let middle = by_reward[5];

    // Beats the worst and the middle retrieved entries, not the best: the
    // worst goes.
    let target = (middle.0 + best.0) / 2.0;
    let cand = common::experience(&env.devices, random_forecast(&mut rng), -target / 1000.0, 99);
    assert!(cand.reward > middle.0 && cand.reward < best.0);
    let retrieved = matched(&[best.1 .0, worst.1 .0, middle.1 .0]);
    let before = store.clone();
    let d = update_store(&mut store, cand.clone(), &retrieved).unwrap();
    let (old, new) = d.replaced.unwrap();
    assert_eq!(old, worst.1);
    assert!(store.get(old).is_none());
    assert_eq!(store.get(new).unwrap().reward, cand.reward);
    assert_eq!(store.len(), before.len());
    let changed = before.entries().iter().zip(store.entries()).filter(|(a, b)| a != b).count();
    assert_eq!(changed, 1);
}

#[test]
fn update_skips_unbeaten_and_unretrieved_entries() {
    let env = Environment::feeder_141();
    let mut store = random_store(&env.devices, 10, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let worst = store.entries().iter().min_by(|a, b| a.reward.total_cmp(&b.reward)).unwrap().clone();
    let others: Vec<u64> = store.entries().iter().filter(|e| e.id != worst.id).map(|e| e.id.0).take(3).collect();

    // A perfect candidate, but the worst entry was not retrieved.
    let perfect = common::experience(&env.devices, random_forecast(&mut rng), 0.0, 50);
    let top = store.entries().iter().map(|e| e.reward).fold(f64::NEG_INFINITY, f64::max);
    assert!(perfect.reward > top);
    let before = store.clone();
    let d = update_store(&mut store, perfect, &matched(&others)).unwrap();
    assert!(store.get(worst.id).is_some());
    assert!(d.replaced.is_some());

    // A tie with the retrieved entry is not an improvement.
    let mut store = before;
    let mut tie = common::experience(&env.devices, random_forecast(&mut rng), 0.0, 51);
    tie.results = worst.results.clone();
    tie.reward = worst.reward;
    let d = update_store(&mut store, tie, &matched(&[worst.id.0])).unwrap();
    assert!(d.replaced.is_none());
}
