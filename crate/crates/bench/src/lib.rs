//! Shared inputs for the criterion benches.

use tamperscope::imaging::{BinaryMask, ScoreMap};
use tamperscope::synth::{CopyMoveFixture, SplitMix};

/// The 256×256 translation forgery used by the detector benches.
pub fn forgery() -> CopyMoveFixture {
    CopyMoveFixture::random(7)
}

/// Random score map and mask of the given size.
pub fn map_and_mask(seed: u64, width: usize, height: usize) -> (ScoreMap, BinaryMask) {
    let mut rng = SplitMix::new(seed);
    let n = width * height;
    let scores = (0..n).map(|_| rng.next_f64()).collect();
    let mut gt: Vec<bool> = (0..n).map(|_| rng.next_u64().is_multiple_of(4)).collect();
    gt[0] = true;
    gt[1] = false;
    (
        ScoreMap::new(width, height, scores).expect("dimensions"),
        BinaryMask::new(width, height, gt).expect("dimensions"),
    )
}
