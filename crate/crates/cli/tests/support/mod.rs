//! Toy dataset, config and process helpers shared by the CLI tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use image::{Rgb, RgbImage};

pub const BIN: &str = env!("CARGO_BIN_EXE_embryocap");
pub const MODELS: [&str; 2] = ["ivv-toy", "base-toy"];
pub const RATER: &str = "rater-1";

/// `(frame_id, ecc, mv)` for the twelve toy frames.
pub const FRAMES: [(&str, &str, &str); 12] = [
    ("W1_F01", "ECC1", "tPNf"),
    ("W1_F02", "ECC1", "t2"),
    ("W1_F03", "ECC1", "t2"),
    ("W1_F04", "ECC1", "tPB2"),
    ("W2_F05", "ECC2", "t3"),
    ("W2_F06", "ECC2", "t4"),
    ("W2_F07", "ECC2", "t3"),
    ("W2_F08", "ECC2", "t4"),
    ("W3_F09", "ECC3", "t5"),
    ("W3_F10", "ECC3", "t8"),
    ("W3_F11", "ECC3", "t6"),
    ("W3_F12", "ECC3", "t8"),
];

pub struct Toy {
    pub dir: tempfile::TempDir,
    pub rater_token: String,
    pub admin_token: String,
    rater_env: String,
    admin_env: String,
}

impl Toy {
    /// Writes images, the source table and a config into a fresh directory.
    pub fn create(tag: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        std::fs::create_dir_all(data.join("img")).unwrap();
        let mut source = String::from("frame_id\tecc\tmv\timage_ref\tgt_caption\n");
        for (i, (id, ecc, mv)) in FRAMES.iter().enumerate() {
            let (w, h) = (40 + 9 * i as u32, 30 + 5 * (11 - i as u32));
            let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 5) as u8, (y * 7) as u8, (i * 20) as u8]));
            img.save(data.join(format!("img/{id}.png"))).unwrap();
            source.push_str(&format!(
                "{id}\t{ecc}\t{mv}\timg/{id}.png\tEmbryo at {mv}, in cycle {ecc}.\n"
            ));
        }
        std::fs::write(data.join("frames.tsv"), source).unwrap();
        let upper = tag.to_uppercase();
        let toy = Self {
            dir,
            rater_token: format!("rater-token-{tag}"),
            admin_token: format!("admin-token-{tag}"),
            rater_env: format!("EMBRYOCAP_TOY_RATER_{upper}"),
            admin_env: format!("EMBRYOCAP_TOY_ADMIN_{upper}"),
        };
        std::fs::write(toy.config(), toy.config_text()).unwrap();
        toy
    }

    fn config_text(&self) -> String {
        format!(
            r#"seed = 2026
out = "out"

[dataset]
root = "data"
source = "data/frames.tsv"

[split]
test_count = 6
subset_sizes = [2, 4]

[[models]]
id = "ivv-toy"
kind = "mock"
mock = {{ template = "Embryo {{frame_id}} shows evenly sized blastomeres." }}

[[models]]
id = "base-toy"
kind = "mock"
mock = {{ template = "An image of cells." }}

[session]
id = "toy"
calibration_count = 2
admin_token_env = "{admin}"

[[session.raters]]
id = "{RATER}"
token_env = "{rater}"
"#,
            admin = self.admin_env,
            rater = self.rater_env,
        )
    }

    pub fn config(&self) -> PathBuf {
        self.dir.path().join("embryocap.toml")
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    pub fn command(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(BIN);
        cmd.arg("--config")
            .arg(self.config())
            .args(args)
            .env(&self.rater_env, &self.rater_token)
            .env(&self.admin_env, &self.admin_token)
            .env_remove("EMBRYOCAP_LOG");
        cmd
    }

    pub fn run(&self, args: &[&str]) -> Output {
        self.command(args).output().unwrap()
    }

    /// Runs a step and panics with its output unless it exits 0.
    pub fn step(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "`{}` exited {:?}\nstdout:\n{}\nstderr:\n{}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// Starts `serve` on an ephemeral port and returns the child and base URL.
    pub fn serve(&self) -> Server {
        let mut child = self
            .command(&["serve", "--bind", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected serve output `{line}`"))
            .to_string();
        Server { child, base }
    }
}

pub struct Server {
    child: Child,
    pub base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Index of a toy frame in [`FRAMES`].
pub fn frame_index(frame_id: &str) -> usize {
    FRAMES.iter().position(|f| f.0 == frame_id).unwrap()
}

/// Scores the scripted rater gives, derived only from what a rater sees.
pub fn scripted_scores(frame_id: &str, caption: &str) -> (i64, i64, i64, i64) {
    let i = frame_index(frame_id) as i64;
    if caption.contains("blastomeres") {
        (
            1,
            2 + i % 2,
            3 + (i % 3 == 0) as i64,
            if i % 3 == 1 { -1 } else { 1 + i % 3 },
        )
    } else if i % 4 == 0 {
        (0, 0, 0, -1)
    } else {
        (1, 1, 1 + i % 2, i % 2)
    }
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
