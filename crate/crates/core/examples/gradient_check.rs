//! Reverse-mode gradients of a small graph against central differences.
//!
//!     cargo run --example gradient_check

use sculpt::ndiff::{finite_difference, relative_error, ParamStore, Tape, Tensor};

fn loss(tape: &mut Tape, store: &ParamStore, x: &Tensor) -> sculpt::Result<sculpt::ndiff::Var> {
    let x = tape.constant(x.clone());
    let w1 = tape.param(store, "w1")?;
    let b1 = tape.param(store, "b1")?;
    let w2 = tape.param(store, "w2")?;
    let h = tape.linear(x, w1, Some(b1))?;
    let h = tape.tanh(h);
    let y = tape.linear(h, w2, None)?;
    let sq = tape.mul(y, y)?;
    Ok(tape.mean(sq))
}

fn main() -> sculpt::Result<()> {
    let mut store = ParamStore::new();
    let ramp = |n: usize, s: f64| Tensor::new(&[n], (0..n).map(|i| s * ((i * 7 % 5) as f64 - 2.0)).collect());
    store.insert("w1", ramp(12, 0.3)?.reshape(&[4, 3])?, true)?;
    store.insert("b1", ramp(4, 0.1)?, false)?;
    store.insert("w2", ramp(8, 0.2)?.reshape(&[2, 4])?, true)?;
    let x = Tensor::new(&[5, 3], (0..15).map(|i| (i as f64 * 0.37).sin()).collect())?;

    let mut tape = Tape::new();
    let l = loss(&mut tape, &store, &x)?;
    println!("loss {:.6}", tape.value(l).data()[0]);
    tape.backward_into(l, &mut store)?;
    let analytic = store.clone();
    let numeric = finite_difference(
        |s| {
            let mut t = Tape::new();
            let l = loss(&mut t, s, &x).unwrap();
            t.value(l).data()[0]
        },
        &mut store,
        1e-5,
    );
    for (name, p) in analytic.iter() {
        let worst = p.grad.iter().zip(&numeric[name]).map(|(a, n)| relative_error(*a, *n)).fold(0.0, f64::max);
        println!("{name:>3}: {} partials, worst relative error {worst:.2e}", p.grad.len());
    }
    Ok(())
}
