//! The committed header must be valid C that covers the whole surface.

use std::process::Command;

const CONSUMER: &str = r#"
#include "pqdast.h"

int check(const char *path, const float *img, float *out) {
    PqdastModel *model = NULL;
    PqdastStatus status = pqdast_model_load(path, &model);
    if (status != PQDAST_STATUS_OK) {
        return (int)status + (pqdast_last_error()[0] != 0);
    }
    int student = pqdast_model_is_student(model);
    status = pqdast_stylize(model, img, 32, 32, img, 32, 32, out);
    double score = 0.0;
    status = pqdast_flip_score(img, out, 32, 32, 67.0, &score);
    pqdast_model_free(model);
    return student + (int)status + (int)score;
}
"#;

#[test]
fn header_compiles_as_c99() {
    let cc = match std::env::var("CC") {
        Ok(cc) => cc,
        Err(_) if Command::new("cc").arg("--version").output().is_ok() => "cc".into(),
        Err(_) => {
            eprintln!("skipping: no C compiler on PATH");
            return;
        }
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("consumer.c");
    std::fs::write(&src, CONSUMER).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let output = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
        .expect("run compiler");
    assert!(
        output.status.success(),
        "header rejected by {cc}:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}
