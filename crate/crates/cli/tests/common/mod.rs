//! A small generated scan shared by the tests of one binary.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ctpack::config::Config;
use ctpack::session::{Session, Settings};
use ctpack_core::synth::{generate, GroundTruth, SceneSpec, LAYOUT_FILE, SLICE_DIR};
use tempfile::TempDir;

pub struct Scan {
    pub dir: TempDir,
    pub truth: GroundTruth,
}

impl Scan {
    pub fn slices(&self) -> PathBuf {
        self.dir.path().join(SLICE_DIR)
    }

    pub fn layout(&self) -> PathBuf {
        self.dir.path().join(LAYOUT_FILE)
    }

    pub fn settings(&self) -> Settings {
        Settings::new(self.slices(), self.layout())
    }

    /// A config file carrying every decision the scene needs.
    pub fn write_config(&self, dir: &Path, with_thresholds: bool) -> PathBuf {
        let align = dir.join("alignment.txt");
        fs::write(&align, self.truth.alignment.to_text()).unwrap();
        let t = &self.truth.thresholds;
        let mut text = format!(
            "scan_dir = {:?}\nlayout = {:?}\nalignment = \"alignment.txt\"\n",
            self.slices(),
            self.layout()
        );
        if with_thresholds {
            text.push_str(&format!(
                "[thresholds]\na_divider = {:?}\nb_divider = {:?}\na_object = {:?}\n",
                t.a_divider, t.b_divider, t.a_object
            ));
        }
        let p = dir.join("ctpack.toml");
        fs::write(&p, text).unwrap();
        p
    }

    /// A new session in `out` with the config's decisions applied.
    pub fn session(&self, out: &Path, with_thresholds: bool) -> Session {
        let cfg = Config::load(&self.write_config(out, with_thresholds)).unwrap();
        let mut s = Session::open(out, Some(Settings::from_config(&cfg).unwrap())).unwrap();
        s.apply_config(&cfg).unwrap();
        s
    }
}

pub fn scan() -> &'static Scan {
    static S: OnceLock<Scan> = OnceLock::new();
    S.get_or_init(|| {
        let mut spec = SceneSpec::stacked([300, 300, 800], 3, (3, 4), 11);
        spec.intensity_offset = 3000;
        let dir = TempDir::new().unwrap();
        let truth = generate(&spec, dir.path()).unwrap();
        Scan { dir, truth }
    })
}

/// Every file under `root`, relative path to bytes, sorted.
pub fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
