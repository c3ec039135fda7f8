//! CLI behavior: flag validation, exit codes, atomic output, plan replay.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use weightsel_core::arch::ArchDescriptor;
use weightsel_core::store::{read_checkpoint, write_checkpoint, DType};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_weightsel")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawn weightsel")
}

const TEACHER_DESC: &str = r#"{
  "family": "vitlet",
  "topology": "isotropic",
  "dim_groups": { "embed": 8, "qkv_out": 24, "mlp_hidden": 16, "head_dim": 4 },
  "attention": {
    "embed_group": "embed",
    "head_dim_group": "head_dim",
    "qkv_template": "blocks.{layer}.attn.qkv.weight",
    "proj_template": "blocks.{layer}.attn.proj.weight"
  },
  "globals": [
    { "name_template": "pos_embed", "axes": ["fixed:1", "fixed:5", "embed:embed"] },
    { "name_template": "head.weight", "axes": ["fixed:10", "embed:embed"], "head": true }
  ],
  "stages": [
    { "stage_id": "blocks", "depth": 3, "per_layer": [
      { "name_template": "blocks.{layer}.norm1.weight", "axes": ["embed:embed"], "init": "one" },
      { "name_template": "blocks.{layer}.attn.qkv.weight", "axes": ["embed:qkv_out", "embed:embed"] },
      { "name_template": "blocks.{layer}.attn.qkv.bias", "axes": ["embed:qkv_out"], "init": "zero" },
      { "name_template": "blocks.{layer}.attn.proj.weight", "axes": ["embed:embed", "embed:embed"] },
      { "name_template": "blocks.{layer}.mlp.fc1.weight", "axes": ["embed:mlp_hidden", "embed:embed"] },
      { "name_template": "blocks.{layer}.mlp.fc2.weight", "axes": ["embed:embed", "embed:mlp_hidden"] }
    ]}
  ]
}"#;

fn student_desc_json() -> String {
    TEACHER_DESC
        .replace(r#""embed": 8"#, r#""embed": 4"#)
        .replace(r#""qkv_out": 24"#, r#""qkv_out": 12"#)
        .replace(r#""mlp_hidden": 16"#, r#""mlp_hidden": 8"#)
        .replace(r#""depth": 3"#, r#""depth": 2"#)
}

struct Setup {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    teacher_arch: PathBuf,
    student_arch: PathBuf,
    teacher_ckpt: PathBuf,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let teacher_arch = dir.path().join("teacher.json");
    let student_arch = dir.path().join("student.json");
    std::fs::write(&teacher_arch, TEACHER_DESC).unwrap();
    std::fs::write(&student_arch, student_desc_json()).unwrap();

    let desc = ArchDescriptor::load(&teacher_arch).unwrap();
    let teacher = desc.synthesize(77, DType::F32);
    let teacher_ckpt = dir.path().join("teacher.wsck");
    write_checkpoint(&teacher, &teacher_ckpt).unwrap();
    Setup {
        dir,
        teacher_arch,
        student_arch,
        teacher_ckpt,
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn inspect_lists_tensors_in_header_order() {
    let s = setup();
    let out = run(&["inspect", path_str(&s.teacher_ckpt)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("20 tensors"), "{text}");
    assert!(
        text.contains("blocks.0.attn.qkv.weight  F32  [24, 8]"),
        "{text}"
    );
    // header order is lexicographic
    let a = text.find("blocks.0.attn.proj.weight").unwrap();
    let b = text.find("blocks.0.attn.qkv.bias").unwrap();
    assert!(a < b);
}

#[test]
fn inspect_empty_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.wsck");
    write_checkpoint(&weightsel_core::Checkpoint::new(), &path).unwrap();
    let out = run(&["inspect", path_str(&path)]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("0 tensors"));
}

#[test]
fn inspect_corrupt_header_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corrupt.wsck");
    let mut bytes = (100u64).to_le_bytes().to_vec();
    bytes.extend_from_slice(b"this is not json padding padding padding padding padding padding padding padding padding padding pad");
    std::fs::write(&path, bytes).unwrap();
    let out = run(&["inspect", path_str(&path)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("header"), "{stderr}");
}

#[test]
fn select_defaults_then_verify_passes() {
    let s = setup();
    let out_ckpt = s.dir.path().join("student.wsck");
    let plan = s.dir.path().join("plan.json");
    let out = run(&[
        "select",
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--teacher-arch",
        path_str(&s.teacher_arch),
        "--student-arch",
        path_str(&s.student_arch),
        "--out",
        path_str(&out_ckpt),
        "--emit-plan",
        path_str(&plan),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let verify = run(&[
        "verify",
        "--student",
        path_str(&out_ckpt),
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--plan",
        path_str(&plan),
    ]);
    assert_eq!(
        verify.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&verify.stdout)
    );
    assert!(String::from_utf8(verify.stdout)
        .unwrap()
        .contains("verdict: PASS"));
}

#[test]
fn random_method_without_seed_is_usage_error() {
    let s = setup();
    let out_ckpt = s.dir.path().join("student.wsck");
    let out = run(&[
        "select",
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--teacher-arch",
        path_str(&s.teacher_arch),
        "--student-arch",
        path_str(&s.student_arch),
        "--element-method",
        "random_consistent",
        "--out",
        path_str(&out_ckpt),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("requires --seed"));
    assert!(!out_ckpt.exists());
}

#[test]
fn emitted_plan_replays_to_identical_bytes() {
    let s = setup();
    let first = s.dir.path().join("first.wsck");
    let plan = s.dir.path().join("plan.json");
    let out = run(&[
        "select",
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--teacher-arch",
        path_str(&s.teacher_arch),
        "--student-arch",
        path_str(&s.student_arch),
        "--element-method",
        "random_consistent",
        "--seed",
        "123",
        "--out",
        path_str(&first),
        "--emit-plan",
        path_str(&plan),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let second = s.dir.path().join("second.wsck");
    let replay = run(&[
        "apply",
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--plan",
        path_str(&plan),
        "--out",
        path_str(&second),
    ]);
    assert!(
        replay.status.success(),
        "{}",
        String::from_utf8_lossy(&replay.stderr)
    );
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

#[test]
fn l1_and_magnitude_methods_produce_students() {
    let s = setup();
    for method in ["l1", "magnitude"] {
        let out_ckpt = s.dir.path().join(format!("{method}.wsck"));
        let out = run(&[
            "select",
            "--teacher",
            path_str(&s.teacher_ckpt),
            "--teacher-arch",
            path_str(&s.teacher_arch),
            "--student-arch",
            path_str(&s.student_arch),
            "--element-method",
            method,
            "--out",
            path_str(&out_ckpt),
        ]);
        assert!(
            out.status.success(),
            "{method}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let ckpt = read_checkpoint(&out_ckpt).unwrap();
        assert_eq!(
            ckpt.get("blocks.0.attn.qkv.weight").unwrap().shape(),
            &[12, 4]
        );
    }

    // magnitude has no slice plan to emit
    let out = run(&[
        "select",
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--teacher-arch",
        path_str(&s.teacher_arch),
        "--student-arch",
        path_str(&s.student_arch),
        "--element-method",
        "magnitude",
        "--out",
        path_str(&s.dir.path().join("x.wsck")),
        "--emit-plan",
        path_str(&s.dir.path().join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn init_is_deterministic_and_records_std() {
    let s = setup();
    let a = s.dir.path().join("a.wsck");
    let b = s.dir.path().join("b.wsck");
    for path in [&a, &b] {
        let out = run(&[
            "init",
            "--student-arch",
            path_str(&s.student_arch),
            "--method",
            "trunc_normal",
            "--seed",
            "9",
            "--out",
            path_str(path),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ckpt = read_checkpoint(&a).unwrap();
    assert_eq!(ckpt.metadata()["init_std"], "0.02");
    assert_eq!(ckpt.metadata()["init_method"], "trunc_normal");
}

#[test]
fn negative_std_is_usage_error() {
    let s = setup();
    let out = run(&[
        "init",
        "--student-arch",
        path_str(&s.student_arch),
        "--method",
        "trunc_normal",
        "--std",
        "-1",
        "--out",
        path_str(&s.dir.path().join("x.wsck")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_tampered_output_exits_one() {
    let s = setup();
    let out_ckpt = s.dir.path().join("student.wsck");
    let plan = s.dir.path().join("plan.json");
    let out = run(&[
        "select",
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--teacher-arch",
        path_str(&s.teacher_arch),
        "--student-arch",
        path_str(&s.student_arch),
        "--out",
        path_str(&out_ckpt),
        "--emit-plan",
        path_str(&plan),
    ]);
    assert!(out.status.success());

    // flip one payload byte on disk
    let ckpt = read_checkpoint(&out_ckpt).unwrap();
    let rec = ckpt.get("blocks.1.mlp.fc2.weight").unwrap();
    let mut data = rec.data().to_vec();
    data[0] ^= 0x40;
    let tampered =
        weightsel_core::TensorRecord::new(rec.name(), rec.dtype(), rec.shape().to_vec(), data)
            .unwrap();
    let mut rebuilt = weightsel_core::Checkpoint::new();
    for t in ckpt.iter() {
        if t.name() != "blocks.1.mlp.fc2.weight" {
            rebuilt.insert(t.clone()).unwrap();
        }
    }
    rebuilt.insert(tampered).unwrap();
    for (k, v) in ckpt.metadata() {
        rebuilt.set_metadata(k.clone(), v.clone());
    }
    write_checkpoint(&rebuilt, &out_ckpt).unwrap();

    let verify = run(&[
        "verify",
        "--student",
        path_str(&out_ckpt),
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--plan",
        path_str(&plan),
        "--json",
    ]);
    assert_eq!(verify.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8(verify.stdout).unwrap()).unwrap();
    assert_eq!(report["verdict"], "fail");
}

#[test]
fn diag_attn_emits_scores_and_csv() {
    let s = setup();
    let csv_dir = s.dir.path().join("csv");
    let out = run(&[
        "diag",
        "attn",
        "--ckpt",
        path_str(&s.teacher_ckpt),
        "--arch",
        path_str(&s.teacher_arch),
        "--layer",
        "0",
        "--head",
        "1",
        "--json",
        "--dump-csv",
        path_str(&csv_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(json["layer"], 0);
    assert_eq!(json["head"], 1);
    assert!(json["diag_score_qk"].is_number());
    assert!(json["diag_score_vproj"].is_number());
    let csv = std::fs::read_to_string(csv_dir.join("layer0_head1_qk.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4); // head_dim rows
}

#[test]
fn failed_select_leaves_no_partial_output() {
    let s = setup();
    let out_ckpt = s.dir.path().join("student.wsck");
    // student wider than teacher: module error, exit 1
    let out = run(&[
        "select",
        "--teacher",
        path_str(&s.teacher_ckpt),
        "--teacher-arch",
        path_str(&s.student_arch),
        "--student-arch",
        path_str(&s.teacher_arch),
        "--out",
        path_str(&out_ckpt),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_ckpt.exists());
    // no temp files left behind either
    let leftovers: Vec<_> = std::fs::read_dir(s.dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn bundled_arch_names_resolve() {
    let s = setup();
    let out_ckpt = s.dir.path().join("vit_t_init.wsck");
    let out = run(&[
        "init",
        "--student-arch",
        "vit_t",
        "--method",
        "xavier",
        "--out",
        path_str(&out_ckpt),
    ]);
    assert!(out.status.success());
    let ckpt = read_checkpoint(&out_ckpt).unwrap();
    assert_eq!(ckpt.len(), 152);
}

#[test]
fn inspect_json_output_is_machine_readable() {
    let s = setup();
    let out = run(&["inspect", path_str(&s.teacher_ckpt), "--json"]);
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let tensors = json["tensors"].as_array().unwrap();
    assert_eq!(tensors.len(), 20);
    assert_eq!(tensors[0]["dtype"], "F32");
    assert_eq!(json["metadata"]["producer"], "weightsel");
}
