//! Building divergence-free fields, measuring them, and saving them.

use nsda::field::{stokes_basis_field, stokes_sine_field};
use nsda::{NormOrder, SpectralField, WaveIndex};

fn main() -> nsda::Result<()> {
    let k_max = 6;
    let e = |k1, k2| stokes_basis_field(WaveIndex::new(k1, k2).unwrap(), k_max);
    let s = |k1, k2| stokes_sine_field(WaveIndex::new(k1, k2).unwrap(), k_max);

    let u = &(&e(1, 0)? + &s(2, 1)?.scaled(0.5)) - &e(0, 3)?.scaled(0.2);
    println!("modes stored: {}", u.coeffs().len());
    for (name, order) in [("L2", NormOrder::L2), ("V", NormOrder::V), ("H2", NormOrder::H2)] {
        println!("|u|_{name} = {:.6}", u.norm(order));
    }

    let x = [0.7, 2.1];
    let v = u.eval_at(x);
    println!("u({:?}) = ({:.6}, {:.6})", x, v[0], v[1]);
    println!("vorticity there = {:.6}", u.vorticity().eval_at(x));

    let bytes = u.to_binary();
    let back = SpectralField::read_binary(bytes.as_slice())?;
    assert_eq!(back, u);
    println!("binary round trip ok, hash {}", &u.content_hash()[..16]);

    let finer = u.resample(12)?;
    println!("resampled to K = 12, |u|_L2 unchanged: {:.6}", finer.norm(NormOrder::L2));
    Ok(())
}
