//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Benchmark cases use the full protocol (1000 messages at 30 Hz) and the
//! lifetime stress runs for `TZC_STRESS_SECS` seconds (default 600), so a
//! complete run takes roughly fifteen minutes.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use rand::SeedableRng;
use tzc_bench::stress::{run_stress, StressConfig};
use tzc_bench::{run_case, summarize, CaseConfig, CaseReport, Transport};
use tzc_core::schema::{bundled_corpus_dir, CompatibilityReport, FieldType, Repeat, StepClass, TypeRef};
use tzc_core::shm::region_name;
use tzc_core::value::{random_value, RandomLimits};
use tzc_core::wire::{decode_control, encode_control, encode_envelope, full_deserialize, full_serialize, ControlEnvelope};
use tzc_core::{classify, plan_layout, MessageSchema, SchemaRegistry, Value};

const FLATNESS_MAX_RATIO: f64 = 3.0;
const SEPARATION_MIN_RATIO: f64 = 10.0;
const CONTROL_BOUND_BYTES: usize = 4096;
const ORACLE_MESSAGES_PER_SCHEMA: usize = 1000;
const MESSAGES: u64 = 1000;
const RATE_HZ: f64 = 30.0;
const SIZES: [u64; 4] = [4 << 10, 64 << 10, 1 << 20, 4 << 20];

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.failed += usize::from(!pass);
    }
}

fn registry() -> SchemaRegistry {
    let mut r = SchemaRegistry::new();
    r.load_corpus(&bundled_corpus_dir()).expect("bundled corpus");
    r
}

fn case(transport: Transport, size: u64, subs: u32) -> CaseConfig {
    CaseConfig {
        payload_size: size,
        subscribers: subs,
        message_count: MESSAGES,
        publish_rate_hz: RATE_HZ,
        transport,
        ..CaseConfig::default()
    }
}

fn run(exe: &Path, config: &CaseConfig, all: &mut Vec<CaseReport>) -> CaseReport {
    let report = run_case(exe, config).unwrap_or_else(|e| CaseReport {
        case_id: config.case_id(),
        config: config.clone(),
        errors: vec![format!("{e:#}")],
        ..CaseReport::default()
    });
    for e in &report.errors {
        eprintln!("  {}: {e}", report.case_id);
    }
    all.push(report.clone());
    report
}

fn p50(r: &CaseReport) -> f64 {
    r.p50_us().unwrap_or(f64::NAN)
}

fn envelope_len(schema: &Arc<MessageSchema>, value: &Value<'_>) -> usize {
    let plan = classify(schema);
    let image = encode_control(value, &plan).unwrap();
    let layout = plan_layout(image.instances()).unwrap();
    encode_envelope(&ControlEnvelope {
        topic: format!("/bench/{}", schema.short_name()),
        sequence: u64::MAX,
        region_name: region_name("/bench"),
        block_offset: u64::MAX,
        message_magic: u64::MAX,
        payload_bytes: layout.total_payload_bytes,
        control: image.into_bytes(),
    })
    .unwrap()
    .len()
}

fn control_bound(r: &SchemaRegistry, v: &mut Verdicts, reports: &[CaseReport]) {
    let image = Arc::clone(r.get("sensor_msgs/Image").unwrap());
    let cloud = Arc::clone(r.get("sensor_msgs/PointCloud").unwrap());
    let mut worst = 0;
    for size in SIZES {
        let mut img = Value::default_for(&image);
        *img.at_path_mut(&image, "header.frame_id").unwrap() = Value::String("camera_color_optical_frame".into());
        *img.at_path_mut(&image, "encoding").unwrap() = Value::String("rgb8".into());
        *img.at_path_mut(&image, "data").unwrap() = Value::Packed(vec![0u8; size as usize].into());
        worst = worst.max(envelope_len(&image, &img));

        let points = size / 12;
        let channel = |name: &str| {
            Value::Message(vec![Value::String(name.into()), Value::Packed(vec![0u8; (points * 4) as usize].into())])
        };
        let mut pc = Value::default_for(&cloud);
        *pc.at_path_mut(&cloud, "header.frame_id").unwrap() = Value::String("velodyne".into());
        *pc.at_path_mut(&cloud, "points").unwrap() = Value::Packed(vec![0u8; (points * 12) as usize].into());
        *pc.at_path_mut(&cloud, "channels").unwrap() = Value::Array(vec![channel("intensity"), channel("ring"), channel("time")]);
        worst = worst.max(envelope_len(&cloud, &pc));
    }
    let bench = reports.iter().filter(|r| r.config.transport == Transport::Tzc).map(|r| r.max_envelope_bytes).max().unwrap_or(0);
    let pass = worst < CONTROL_BOUND_BYTES && (bench as usize) < CONTROL_BOUND_BYTES;
    v.record(
        "criterion-4 control-part bound",
        pass,
        format!("largest Image/PointCloud envelope {worst} B, benchmark envelope {bench} B, bound < {CONTROL_BOUND_BYTES} B"),
    );
}

fn classification_golden(r: &SchemaRegistry, v: &mut Verdicts) {
    let plan = classify(r.get("sensor_msgs/PointCloud").unwrap());
    let shape: Vec<(String, String)> = plan
        .walk()
        .iter()
        .map(|s| {
            let class = match &s.class {
                StepClass::Control => "CONTROL".to_owned(),
                StepClass::Data { element_size } => format!("DATA({element_size})"),
                StepClass::Nested { repeat: Repeat::Var, .. } => "CONTROL[var]".to_owned(),
                StepClass::Nested { repeat, .. } => format!("CONTROL[{repeat:?}]"),
            };
            (s.path.clone(), class)
        })
        .collect();
    let expected: Vec<(String, String)> = [
        ("header", "CONTROL"),
        ("points", "DATA(12)"),
        ("channels", "CONTROL[var]"),
        ("channels[].name", "CONTROL"),
        ("channels[].values", "DATA(4)"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    v.record("criterion-5 classification fidelity", shape == expected, format!("{shape:?}"));
}

fn oracle_equivalence(r: &SchemaRegistry, v: &mut Verdicts) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x5eed_0ac1e);
    let limits = RandomLimits { max_array_len: 6, max_string_len: 10 };
    let (mut total, mut mismatches, mut schemas) = (0usize, 0usize, 0usize);
    for schema in r.iter().filter(|s| s.name().contains('/')) {
        schemas += 1;
        let plan = classify(schema);
        for _ in 0..ORACLE_MESSAGES_PER_SCHEMA {
            let value = random_value(schema, &mut rng, limits);
            let oracle = full_serialize(&value, schema).and_then(|b| full_deserialize(&b, schema));
            let image = encode_control(&value, &plan).unwrap();
            let layout = plan_layout(image.instances()).unwrap();
            let mut payload = vec![0u8; layout.total_payload_bytes as usize];
            for seg in &layout.segments {
                let bytes = value.at_path(schema, &seg.path).and_then(Value::as_bytes).unwrap();
                payload[seg.offset as usize..][..seg.length as usize].copy_from_slice(bytes);
            }
            let partial = decode_control(image.as_bytes(), &plan, &payload);
            total += 1;
            match (oracle, partial) {
                (Ok(a), Ok(b)) if a == b => {}
                _ => mismatches += 1,
            }
        }
    }
    v.record(
        "criterion-6 oracle equivalence",
        mismatches == 0 && total >= schemas * ORACLE_MESSAGES_PER_SCHEMA,
        format!("{total} messages over {schemas} schemas, {mismatches} mismatches"),
    );
}

fn corpus_compatibility(r: &SchemaRegistry, v: &mut Verdicts) {
    let mut missing = Vec::new();
    let mut string_arrays = 0;
    for schema in r.iter().filter(|s| s.name().contains('/')) {
        let plan = classify(schema);
        let direct_data = schema.fields().iter().any(|f| f.ty.is_data_array());
        if direct_data && plan.data_step_count() == 0 {
            missing.push(schema.name().to_owned());
        }
        for step in plan.walk() {
            if matches!(step.field.ty, FieldType::VarArray(TypeRef::String)) {
                string_arrays += 1;
                if !matches!(step.class, StepClass::Control) {
                    missing.push(step.path.clone());
                }
            }
        }
    }
    let report = CompatibilityReport::from_registry(r);
    v.record(
        "criterion-9 corpus compatibility",
        missing.is_empty() && string_arrays > 0,
        format!(
            "{} schemas, {} need support, {} supported ({:.1}%), {string_arrays} string-array fields CONTROL, violations {missing:?}",
            report.total,
            report.need_support,
            report.supported,
            report.supported_percent()
        ),
    );
}

fn main() -> ExitCode {
    let exe = Path::new(env!("CARGO_BIN_EXE_tzc-bench"));
    let r = registry();
    let mut v = Verdicts { failed: 0 };
    let mut reports = Vec::new();

    classification_golden(&r, &mut v);
    oracle_equivalence(&r, &mut v);
    corpus_compatibility(&r, &mut v);

    let tzc_small = run(exe, &case(Transport::Tzc, 4 << 10, 1), &mut reports);
    let tzc_large = run(exe, &case(Transport::Tzc, 4 << 20, 1), &mut reports);
    let ratio = p50(&tzc_large) / p50(&tzc_small);
    v.record(
        "criterion-1 latency flatness",
        tzc_small.valid && tzc_large.valid && ratio <= FLATNESS_MAX_RATIO,
        format!(
            "p50 4MB {:.1} us / p50 4KB {:.1} us = {ratio:.2} (max {FLATNESS_MAX_RATIO})",
            p50(&tzc_large),
            p50(&tzc_small)
        ),
    );

    let tzc8 = run(exe, &case(Transport::Tzc, 4 << 20, 8), &mut reports);
    let copy8 = run(exe, &case(Transport::CopyBaseline, 4 << 20, 8), &mut reports);
    let sep = p50(&copy8) / p50(&tzc8);
    v.record(
        "criterion-2 separation vs copy baseline",
        tzc8.valid && copy8.valid && sep >= SEPARATION_MIN_RATIO,
        format!("p50 copy {:.1} us / p50 tzc {:.1} us = {sep:.1}x (min {SEPARATION_MIN_RATIO}x)", p50(&copy8), p50(&tzc8)),
    );

    // Copy growth with the subscriber count, at a size the sockets keep up with.
    let growth: Vec<CaseReport> = [1u32, 2, 4]
        .iter()
        .map(|&s| run(exe, &CaseConfig { message_count: 100, ..case(Transport::CopyBaseline, 4 << 10, s) }, &mut reports))
        .collect();
    let per_msg: Vec<f64> = growth.iter().map(|g| g.copied_bytes() as f64 / g.published.max(1) as f64).collect();
    let step_1_2 = per_msg[1] - per_msg[0];
    let step_2_4 = (per_msg[2] - per_msg[1]) / 2.0;
    let lossless = growth.iter().all(|g| g.valid && g.loss_rate() == 0.0);
    let linear = lossless && step_1_2 > 0.0 && (step_2_4 - step_1_2).abs() <= 1e-9 * step_1_2.max(1.0);
    let floor = growth
        .iter()
        .all(|g| g.copied_bytes() >= g.config.payload_size * (1 + g.config.subscribers as u64) * g.published);
    let tzc_copies: Vec<(String, u64)> = reports
        .iter()
        .filter(|r| r.config.transport == Transport::Tzc)
        .map(|r| (r.case_id.clone(), r.copied_bytes()))
        .collect();
    let tzc_zero = tzc_copies.iter().all(|(_, c)| *c == 0);
    v.record(
        "criterion-3 zero-copy audit",
        tzc_zero && linear && floor,
        format!(
            "tzc copied {tzc_copies:?}; copy baseline bytes/msg at 1,2,4 subs = {:.0}, {:.0}, {:.0} (per-sub step {step_1_2:.0} then {step_2_4:.0})",
            per_msg[0], per_msg[1], per_msg[2]
        ),
    );

    // Slow subscriber: subscriber 0 sleeps 50 ms per callback at 30 Hz.
    let slow = |t: Transport| CaseConfig {
        message_count: 150,
        slow_subscriber_ms: 50,
        policy: "best".into(),
        region_size: 16 << 20,
        ..case(t, 4 << 20, 2)
    };
    let slow_tzc = run(exe, &slow(Transport::Tzc), &mut reports);
    let slow_copy = run(exe, &slow(Transport::CopyBaseline), &mut reports);
    let violations: Vec<String> = reports
        .iter()
        .flat_map(|r| r.accounting_violations().into_iter().map(move |e| format!("{}: {e}", r.case_id)))
        .collect();
    let losses = |r: &CaseReport| {
        r.subscribers.iter().map(|s| format!("{}+{}", s.stale, s.dropped)).collect::<Vec<_>>().join(",")
    };
    v.record(
        "criterion-8 reliability accounting",
        violations.is_empty()
            && slow_tzc.valid
            && slow_copy.valid
            && tzc8.loss_rate() <= copy8.loss_rate(),
        format!(
            "exact for {} cases (in-flight 0 after end of stream); slow sub stale+dropped tzc [{}] copy [{}]; loss at 4MB x8 tzc {:.3} <= copy {:.3}; violations {violations:?}",
            reports.len(),
            losses(&slow_tzc),
            losses(&slow_copy),
            tzc8.loss_rate(),
            copy8.loss_rate()
        ),
    );

    control_bound(&r, &mut v, &reports);

    let stress = StressConfig::default();
    let secs = stress.duration.as_secs();
    match run_stress(exe, &stress) {
        Ok(s) => v.record(
            "criterion-7 lifetime safety",
            s.passed() && s.elapsed_ms >= stress.duration.as_millis() as u64,
            format!(
                "{secs} s, {} workers, {} attaches, {} stale, {} checkpoints, poison {}, mismatches {}, refcount violations {}, worker errors {} {:?}",
                s.workers,
                s.attaches,
                s.stale,
                s.checkpoints,
                s.poison_observations,
                s.pattern_mismatches,
                s.refcount_violations,
                s.worker_errors,
                s.notes
            ),
        ),
        Err(e) => v.record("criterion-7 lifetime safety", false, format!("{e:#}")),
    }

    eprint!("{}", summarize(&reports));
    if v.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
