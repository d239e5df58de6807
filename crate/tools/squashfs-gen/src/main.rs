//! Writes the SquashFS reference image used by the scanner tests.
//!
//! Usage: squashfs-gen <out.img>

use std::fs::File;
use std::io::{BufWriter, Cursor};

use backhand::compression::Compressor;
use backhand::{FilesystemCompressor, FilesystemWriter, NodeHeader};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).ok_or("usage: squashfs-gen <out.img>")?;
    let header = NodeHeader::new(0o755, 0, 0, 1_500_000_000);
    let mut fs = FilesystemWriter::default();
    fs.set_time(1_500_000_000);
    fs.set_compressor(FilesystemCompressor::new(Compressor::Gzip, None)?);
    fs.set_root_mode(0o755);
    fs.push_dir("etc", header)?;
    fs.push_file(Cursor::new(b"wemo\n".to_vec()), "etc/hostname", NodeHeader::new(0o644, 0, 0, 1_500_000_000))?;
    fs.push_dir("sbin", header)?;
    fs.push_file(
        Cursor::new(b"#!/bin/sh\necho starting plug daemon\n".repeat(64)),
        "sbin/plugd",
        header,
    )?;
    let mut w = BufWriter::new(File::create(&out)?);
    fs.write(&mut w)?;
    Ok(())
}
