use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flattens each node's `[P, d]` tokens and maps them to `τ` outputs.
pub fn projection_head<T: Scalar>(tape: &mut Tape<T>, tokens: Var, w: Var, b: Var) -> Result<Var> {
    let s = tape.shape(tokens).to_vec();
    let flat = s[2] * s[3];
    if tape.shape(w)[0] != flat {
        return Err(Error::Shape(format!("head expects {} inputs, tokens give {flat}", tape.shape(w)[0])));
    }
    let x = tape.reshape(tokens, &[s[0], s[1], flat])?;
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    #[test]
    fn head_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 4, 5], |k| (k as f64).cos()));
        let w0 = tape.constant(Tensor::zeros(&[20, 6]));
        let b = tape.constant(Tensor::from_fn(&[6], |k| k as f64));
        let y = projection_head(&mut tape, x, w0, b).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 6]);
        for row in tape.value(y).data().chunks(6) {
            assert_eq!(row, tape.value(b).data());
        }

        let w = tape.constant(Tensor::from_fn(&[20, 6], |k| (k as f64 * 0.3).sin()));
        let zb = tape.constant(Tensor::zeros(&[6]));
        let x2 = tape.scale(x, 2.0);
        let y1 = projection_head(&mut tape, x, w, zb).unwrap();
        let y2 = projection_head(&mut tape, x2, w, zb).unwrap();
        for (a, b) in tape.value(y1).data().iter().zip(tape.value(y2).data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
