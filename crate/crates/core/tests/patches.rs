mod common;

use common::*;
use pixeltext::patchio::{
    attention_mask_from_roles, depatchify, loss_mask_from_roles, normalize_patch, patchify, to_binary, to_grayscale,
    PatchSequence, TARGET_EPS,
};
use pixeltext::render::{PatchRole, RenderedStrip};
use proptest::prelude::*;

fn strip_from_golden(name: &str) -> RenderedStrip {
    let (height, width, pixels) = golden(name);
    RenderedStrip {
        height,
        width,
        channels: 3,
        patch_px: 16,
        pixels,
        used_patches: 0,
        patch_roles: vec![],
    }
}

#[test]
fn grayscale_and_binary_follow_per_pixel_rules() {
    for name in ["a_black_4.pxstrip", "Ab_blue_4.pxstrip", "Ab_gray_4.pxstrip"] {
        let rgb = strip_from_golden(name);
        let gray = to_grayscale(&rgb).unwrap();
        let bin = to_binary(&rgb, 128).unwrap();
        assert_eq!(gray.channels, 1);
        for (i, px) in rgb.pixels.chunks_exact(3).enumerate() {
            let expect = luma_oracle(px[0], px[1], px[2]);
            let float = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            assert!((gray.pixels[i] as f64 - float).abs() <= 0.5 + 1e-9);
            assert_eq!(gray.pixels[i], expect, "{name} pixel {i}");
            assert_eq!(bin.pixels[i], if expect < 128 { 0 } else { 255 });
        }
    }
    // ink of the gray golden sits exactly on the threshold and goes high
    assert_eq!(luma_oracle(120, 130, 140), 128);
    let gray_strip = to_binary(&strip_from_golden("Ab_gray_4.pxstrip"), 128).unwrap();
    assert!(gray_strip.pixels[..16 * 64].iter().all(|&v| v == 255 || v == 0));
}

#[test]
fn single_channel_strips_patchify() {
    let gray = to_grayscale(&strip_from_golden("Ab_blue_4.pxstrip")).unwrap();
    let seq = patchify(&gray, 16).unwrap();
    assert_eq!(seq.patch_dim, 256);
    assert_eq!(seq.roles, vec![PatchRole::Content, PatchRole::Content, PatchRole::Eos, PatchRole::Pad]);
    assert_eq!(depatchify(&seq, 16, 1).unwrap(), gray.pixels);
}

#[test]
fn masks_on_role_patterns() {
    use PatchRole::*;
    let roles = [Content, Content, Content, Eos, Pad, Pad];
    assert_eq!(attention_mask_from_roles(&roles), vec![true, true, true, false, false, false]);
    assert_eq!(loss_mask_from_roles(&roles), vec![true, true, false, false, false, false]);
}

#[test]
fn constant_patches_normalize_to_zero() {
    for v in [0.0f32, 0.25, 1.0] {
        assert!(normalize_patch(&[v; 768], TARGET_EPS).iter().all(|x| x.abs() < 1e-6));
    }
}

proptest! {
    #[test]
    fn depatchify_inverts_patchify(
        n_patches in 1usize..6,
        p in prop::sample::select(vec![2usize, 4, 16]),
        c in prop::sample::select(vec![1usize, 3]),
        seed in any::<u64>(),
    ) {
        let width = n_patches * p;
        let mut state = seed;
        let pixels: Vec<u8> = (0..p * width * c)
            .map(|_| { state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (state >> 56) as u8 })
            .collect();
        let strip = RenderedStrip { height: p, width, channels: c, patch_px: p, pixels: pixels.clone(), used_patches: 0, patch_roles: vec![] };
        let seq = patchify(&strip, p).unwrap();
        prop_assert_eq!(seq.len(), n_patches);
        prop_assert_eq!(depatchify(&seq, p, c).unwrap(), pixels);
    }

    #[test]
    fn normalized_patches_are_standardized(values in prop::collection::vec(0.0f32..1.0, 8..64)) {
        let z = normalize_patch(&values, TARGET_EPS);
        let n = z.len() as f64;
        let mean = z.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = z.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-5);
        let raw_mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let raw_var = values.iter().map(|&v| (v as f64 - raw_mean).powi(2)).sum::<f64>() / n;
        prop_assert!((var - raw_var / (raw_var + TARGET_EPS)).abs() < 1e-4);
    }
}

#[test]
fn truncation_keeps_prefix() {
    let seq = PatchSequence::from_roles(2, vec![0.5, 0.5, 0.0, 0.0, 1.0, 1.0], vec![PatchRole::Content, PatchRole::Eos, PatchRole::Pad]);
    let t = seq.truncated(2);
    assert_eq!(t.len(), 2);
    assert_eq!(t.attention_mask, vec![true, false]);
}
