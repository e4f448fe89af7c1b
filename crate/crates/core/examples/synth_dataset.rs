//! Writes a synthetic dataset: `synth_dataset <dir> [n] [seed]`.

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "synthetic".into());
    let n = args.next().map_or(60, |s| s.parse().expect("n"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let ds = biomaudit::synth::write_dataset(std::path::Path::new(&dir), n, seed)?;
    println!("{}", ds.manifest.display());
    Ok(())
}
