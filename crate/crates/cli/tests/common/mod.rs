#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kspc::idx::{encode_images, encode_labels};

pub fn kspc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kspc"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Images of `side × side` pixels; sample `i` has class `i % classes` and
/// lights the pixel of its class brightly plus a faint pseudo-random texture.
pub fn class_images(count: usize, side: usize, classes: usize) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut state: u32 = 12345;
    let mut next = || {
        state = state.wrapping_mul(1_103_515_245).wrapping_add(12345);
        (state >> 16) as u8
    };
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        let mut img: Vec<u8> = (0..side * side).map(|_| next() / 8).collect();
        img[class] = 200 + next() % 56;
        images.push(img);
        labels.push(class as u8);
    }
    (images, labels)
}

pub fn write_images(dir: &Path, name: &str, images: &[Vec<u8>], side: u32) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, encode_images(images, side, side)).unwrap();
    path
}

pub fn write_labels(dir: &Path, name: &str, labels: &[u8]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, encode_labels(labels)).unwrap();
    path
}

/// The 5000/1000 MNIST subset produced by `scripts/prepare_mnist.py`.
pub fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}
