use aescope_core::experiment_log::{parse_line, parse_log, parse_log_str, ExperimentLog, LogRecord, RecordStatus};
use aescope_core::tools::build_tool_registry;
use aescope_core::workflow::{
    execute_plan, parse_plan, plan_fingerprint, validate_plan, Approval, ExecError, PlanMetadata, PlanSource, Step,
    WorkflowPlan,
};
use aescope_core::Microscope;
use chrono::{DateTime, Duration, Utc};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;
use serde_json::{Map, Value as Json};
use std::collections::BTreeMap;

fn leaf() -> impl Strategy<Value = Json> {
    prop_oneof![
        any::<bool>().prop_map(Json::from),
        any::<i64>().prop_map(Json::from),
        any::<u64>().prop_map(Json::from),
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Json::from),
        "\\PC{0,12}".prop_map(Json::from),
        Just(Json::Null),
    ]
}

fn json_value() -> impl Strategy<Value = Json> {
    leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Json::Array),
            prop::collection::btree_map("[a-z_]{1,6}", inner, 0..4).prop_map(|m| Json::Object(m.into_iter().collect::<Map<_, _>>())),
        ]
    })
}

fn timestamp() -> impl Strategy<Value = String> {
    (0i64..4_000_000_000_000).prop_map(|ms| {
        let t = DateTime::<Utc>::from_timestamp(0, 0).unwrap() + Duration::milliseconds(ms);
        t.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
    })
}

fn record(seq: u64) -> impl Strategy<Value = LogRecord> {
    (
        timestamp(),
        "[a-z][a-z_]{0,20}",
        prop::collection::btree_map("[a-z_]{1,12}", json_value(), 0..6),
        prop_oneof![Just(RecordStatus::Ok), "[a-z-]{1,16}".prop_map(RecordStatus::Error)],
        prop::option::of("ds-[0-9]{6}"),
    )
        .prop_map(move |(ts, op, params, status, dataset_ref)| LogRecord { seq, ts, op, params, status, dataset_ref })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn record_line_round_trip(seq in 1u64..u64::MAX, rec in (1u64..2).prop_flat_map(record)) {
        let rec = LogRecord { seq, ..rec };
        let line = rec.to_line();
        prop_assert!(line.ends_with('\n'));
        prop_assert_eq!(line.matches('\n').count(), 1);
        let back = parse_line(&line[..line.len() - 1], 1).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(back.to_line(), line);
    }
}

#[test]
fn thousand_record_log_file_is_byte_identical() {
    let mut runner = TestRunner::deterministic();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.aelog");
    let mut log = ExperimentLog::open(&path).unwrap();
    for seq in 1..=1000 {
        let rec = record(seq).new_tree(&mut runner).unwrap().current();
        log.write_record(rec).unwrap();
    }
    let bytes = std::fs::read_to_string(&path).unwrap();
    let parsed = parse_log(&path).unwrap();
    assert_eq!(parsed.len(), 1000);
    assert_eq!(parsed, log.records());
    let rewritten: String = parsed.iter().map(LogRecord::to_line).collect();
    assert_eq!(rewritten, bytes);
    assert_eq!(parse_log_str(&rewritten).unwrap(), parsed);
}

fn plan_strategy() -> impl Strategy<Value = WorkflowPlan> {
    let ops: Vec<&'static str> = build_tool_registry().names().collect();
    let step = (prop::sample::select(ops), prop::collection::btree_map("[a-z_]{1,10}", json_value(), 0..4), any::<bool>());
    (
        "[a-z-]{1,12}",
        "\\PC{0,10}",
        prop::collection::vec(step, 0..8),
        prop::collection::vec((any::<prop::sample::Index>(), "[a-z_]{1,8}", "[a-z_#0-9]{1,8}"), 0..6),
    )
        .prop_map(|(name, author, steps, binds)| {
            let mut plan = WorkflowPlan::new(&name, PlanSource::Human);
            plan.metadata = PlanMetadata { author, created_at: String::new(), source: PlanSource::Assistant };
            for (i, (op, params, soft)) in steps.into_iter().enumerate() {
                let mut s = Step::new(&format!("s{i}"), op);
                s.params = params;
                s.continue_on_error = soft;
                plan.push(s);
            }
            let n = plan.steps.len();
            if n >= 2 {
                for (idx, param, output) in binds {
                    let target = 1 + idx.index(n - 1);
                    let source = idx.index(target);
                    let src = plan.steps[source].id.clone();
                    let step = plan.steps[target].clone().bind(&param, &src, &output);
                    plan.steps[target] = step;
                }
            }
            plan
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn plan_document_round_trip(plan in plan_strategy()) {
        let doc = plan.to_document();
        let back = parse_plan(&doc).unwrap();
        prop_assert_eq!(&back, &plan);
        prop_assert_eq!(back.to_document(), doc);
        prop_assert_eq!(plan_fingerprint(&back), plan_fingerprint(&plan));
    }

    #[test]
    fn validation_is_total_and_gates_execution(plan in plan_strategy()) {
        let verdict = validate_plan(&plan, build_tool_registry());
        let mut scope = Microscope::with_seed(3, &Default::default()).unwrap();
        let stale = Approval::from_fingerprint("00000000-0");
        prop_assert_eq!(execute_plan(&plan, &stale, &mut scope).unwrap_err(), ExecError::NotApproved);
        if let Err(d) = verdict {
            prop_assert!(!d.is_empty());
            let approved = Approval::grant(&plan);
            prop_assert!(matches!(execute_plan(&plan, &approved, &mut scope), Err(ExecError::Invalid(_))));
            prop_assert_eq!(scope.log().len(), 0);
            prop_assert_eq!(scope.instrument().measurement_count(), 0);
        }
    }

    #[test]
    fn any_edit_voids_approval(plan in plan_strategy(), key in "[a-z]{1,6}") {
        let approval = Approval::grant(&plan);
        prop_assert!(approval.covers(&plan));
        let mut edited = plan.clone();
        edited.push(Step::new(&format!("extra_{key}"), "tip_control"));
        prop_assert!(!approval.covers(&edited));
        let mut renamed = plan.clone();
        renamed.name.push('x');
        prop_assert!(!approval.covers(&renamed));
    }
}

#[test]
fn params_map_is_sorted_in_documents() {
    let mut params = BTreeMap::new();
    params.insert("zeta".to_string(), Json::from(1));
    params.insert("alpha".to_string(), Json::from(2));
    let mut plan = WorkflowPlan::new("p", PlanSource::Human);
    let mut s = Step::new("a", "tip_control");
    s.params = params;
    plan.push(s);
    let doc = plan.to_document();
    assert!(doc.find("alpha").unwrap() < doc.find("zeta").unwrap());
}
