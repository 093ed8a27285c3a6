use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_bias-audit");

const SYNTHETIC: &str = r#"
seed = 5
[plan]
implicit_replicates = 1
explicit_gender_replicates = 2
explicit_eth_age_replicates = 1

[[models]]
model_id = "synthetic-a"
provider = "synthetic"
[models.synthetic]
refusal_probability = 0.05
[models.synthetic.default]
politics = { liberal = 0.5, conservative = 0.3, neutral = 0.2 }
religion = { christian = 0.7, unaffiliated = 0.3 }
sexual_orientation = { heterosexual = 0.9, bisexual = 0.1 }
socioeconomic_status = { "middle-class" = 1.0 }
occupations = { teacher = 0.5, chef = 0.5 }
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("audit.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap()
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SYNTHETIC);
    let out = dir.path().join("out");

    for stage in ["corpus", "run", "parse", "analyze", "report"] {
        let o = run(&[stage], &config, &out);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for file in [
        "records.jsonl",
        "profiles.jsonl",
        "parse_report.json",
        "distributions.csv",
        "tests.csv",
        "scores.csv",
        "polarity.csv",
    ] {
        assert!(out.join("synthetic-a").join(file).is_file(), "{file}");
    }
    assert!(out.join("report/synthetic-a/implicit/politics.md").is_file());
    assert!(out.join("report/summary_explicit.csv").is_file());

    let records = std::fs::read(out.join("synthetic-a/records.jsonl")).unwrap();
    let o = run(&["run"], &config, &out);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 written"));
    assert_eq!(std::fs::read(out.join("synthetic-a/records.jsonl")).unwrap(), records);

    let o = run(&["audit", "--replay"], &config, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SYNTHETIC);
    let out = dir.path().join("out");

    assert_eq!(code(&run(&["parse"], &config, &out)), 2, "missing records");
    assert_eq!(code(&run(&["corpus"], &config, &out)), 0);
    assert_eq!(code(&run(&["run", "--replay"], &config, &out)), 4);
    let dry = run(&["run", "--dry-run"], &config, &out);
    assert_eq!(code(&dry), 0);
    assert!(String::from_utf8_lossy(&dry.stdout).contains("to send"));
    assert!(!out.join("synthetic-a/records.jsonl").exists());
    assert_eq!(code(&run(&["run", "--model", "nope"], &config, &out)), 2);

    let bad = write_config(dir.path(), "concurrency = 0\n");
    assert_eq!(code(&run(&["corpus"], &bad, &out)), 2);

    let hosted = dir.path().join("hosted.toml");
    std::fs::write(
        &hosted,
        "[[models]]\nmodel_id = \"gpt-4o-mini\"\nprovider = \"openai\"\n",
    )
    .unwrap();
    let o = run(&["audit"], &hosted, &out);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("OPENAI_API_KEY"));

    let o = Command::new(BIN).arg("audit").output().unwrap();
    assert_eq!(code(&o), 2);
}

/// Answers every request with a chat completion carrying an attributes block.
fn serve_completions() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            let text = "Sam teaches history.\n\nAttributes:\n- Political Affiliation: Democrat\n- Religion: Catholic\n- Sexual Orientation: straight\n- Socioeconomic Status: middle class\n- Occupation: Teacher\n";
            let reply = serde_json::json!({
                "id": "cmpl-1",
                "model": "mock",
                "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

#[test]
fn hosted_provider_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let endpoint = serve_completions();
    let config = write_config(
        dir.path(),
        &format!(
            r#"
            concurrency = 4
            [plan]
            implicit_replicates = 1
            explicit_gender_replicates = 1
            explicit_eth_age_replicates = 1
            [[models]]
            model_id = "mock-chat"
            provider = "openai"
            endpoint = "{endpoint}"
            rate_limit_rpm = 600000
            params = {{ temperature = 0.7 }}
            "#
        ),
    );
    let out = dir.path().join("out");
    let o = Command::new(BIN)
        .args(["audit", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .env("OPENAI_API_KEY", "test-key")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("0 refusals, 0 unparseable, 0 with unmapped values"),
        "{stdout}"
    );
    let politics = std::fs::read_to_string(out.join("report/mock-chat/implicit/politics.md")).unwrap();
    assert!(politics.contains("| **Gender** | Male (n=100) | 0.00"), "{politics}");
    assert!(politics.contains("100.00"));
}
