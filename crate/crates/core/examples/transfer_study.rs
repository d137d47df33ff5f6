//! Pretrains a residual U-Net on ellipse lesions, fine-tunes it with a
//! frozen encoder on rectangle lesions and compares against training from
//! scratch. Prints all three histories and the comparison.
//!
//! Usage: transfer_study [IMAGE_SIDE] [SEED]

use mriseg::study::TransferStudy;

fn main() -> Result<(), mriseg::Error> {
    let mut args = std::env::args().skip(1);
    let side = args.next().map_or(Ok(64), |s| s.parse()).expect("IMAGE_SIDE must be an integer");
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("SEED must be an integer");
    let study = TransferStudy {
        image_size: (side, side),
        seed,
        ..TransferStudy::default()
    };
    let out = study.run()?;
    print!("{}", out.histories_csv());
    let show = |e: Option<usize>| e.map_or("never".to_string(), |e| e.to_string());
    println!("frozen tensors: {} (bit-identical after fine-tuning: {})", out.frozen.len(), out.frozen_identical);
    println!(
        "epochs to val dice {}: fine-tuned {}, scratch {}",
        study.target_dice,
        show(out.fine_tuned_epochs),
        show(out.scratch_epochs)
    );
    println!("transfer {}", if out.transfer_helps() { "helps" } else { "does not help" });
    Ok(())
}
