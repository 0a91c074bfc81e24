use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::PathBuf;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    Tensor::rand_uniform([1, 3, h, w], 0.0, 1.0, &mut rng(seed))
}

#[test]
fn constant_frames_blur_to_themselves() {
    let seq = FrameSequence::new(vec![Tensor::full([1, 3, 4, 4], 0.3); 5]).unwrap();
    let p = synthesize_blur(&seq, 5).unwrap();
    assert!(p.blurry.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
    assert_eq!(p.sharp, Tensor::full([1, 3, 4, 4], 0.3));
}

#[test]
fn three_frame_mean_and_middle() {
    let frames = [0.0, 0.3, 0.9]
        .iter()
        .map(|&v| {
            let mut t = Tensor::zeros([1, 3, 2, 2]);
            t.set(0, 1, 1, 0, v);
            t
        })
        .collect();
    let p = synthesize_blur(&FrameSequence::new(frames).unwrap(), 3).unwrap();
    assert!((p.blurry.at(0, 1, 1, 0) - 0.4).abs() < 1e-7);
    assert_eq!(p.sharp.at(0, 1, 1, 0), 0.3);
}

#[test]
fn seven_frame_mean_oracle() {
    let frames: Vec<Tensor> = (0..7).map(|i| random_image(5, 6, i)).collect();
    let p = synthesize_blur(&FrameSequence::new(frames.clone()).unwrap(), 7).unwrap();
    for i in 0..p.blurry.len() {
        let mean = frames.iter().map(|f| f64::from(f.data()[i])).sum::<f64>() / 7.0;
        assert!((f64::from(p.blurry.data()[i]) - mean).abs() < 1e-7);
    }
    assert_eq!(p.sharp, frames[3]);
}

#[test]
fn blur_rejects_bad_frame_counts() {
    let seq = FrameSequence::new(vec![Tensor::zeros([1, 3, 2, 2]); 5]).unwrap();
    assert!(matches!(synthesize_blur(&seq, 7), Err(CoreError::Input(_))));
    assert!(matches!(synthesize_blur(&seq, 4), Err(CoreError::Input(_))));
    assert!(FrameSequence::new(vec![Tensor::zeros([1, 3, 2, 2]), Tensor::zeros([1, 3, 2, 4])]).is_err());
    assert!(FrameSequence::new(vec![]).is_err());
}

#[test]
fn sequence_windows_do_not_overlap() {
    let frames: Vec<Tensor> = (0..10).map(|i| Tensor::full([1, 3, 2, 2], i as f32)).collect();
    let seq = FrameSequence::new(frames).unwrap();
    let mids: Vec<f32> = seq.windows(3).map(|w| synthesize_blur(&w, 3).unwrap().sharp.data()[0]).collect();
    assert_eq!(mids, [1.0, 4.0, 7.0]);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

    #[test]
    fn blur_is_linear(seed in proptest::prelude::any::<u64>(), alpha in -2.0f32..2.0, beta in -2.0f32..2.0) {
        let a: Vec<Tensor> = (0..5).map(|i| random_image(3, 4, seed.wrapping_add(i))).collect();
        let b: Vec<Tensor> = (0..5).map(|i| random_image(3, 4, seed.wrapping_add(100 + i))).collect();
        let mix: Vec<Tensor> = a.iter().zip(&b).map(|(x, y)| x.scale(alpha).add(&y.scale(beta)).unwrap()).collect();
        let blur = |f: Vec<Tensor>| synthesize_blur(&FrameSequence::new(f).unwrap(), 5).unwrap().blurry;
        let lhs = blur(mix);
        let rhs = blur(a).scale(alpha).add(&blur(b).scale(beta)).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            proptest::prop_assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn crop_commutes_with_pyramid_on_aligned_offsets(oy in 0usize..4, ox in 0usize..4) {
        let img = random_image(32, 32, 9);
        let (y, x) = (4 * oy, 4 * ox);
        let cropped = build_pyramid(&img.crop(y, x, 16, 16).unwrap()).unwrap();
        let full = build_pyramid(&img).unwrap();
        for k in 0..3 {
            let (s, size) = (1 << k, 16 >> k);
            let expect = full.levels()[k].crop(y / s, x / s, size, size).unwrap();
            proptest::prop_assert_eq!(&cropped.levels()[k], &expect);
        }
    }
}

#[test]
fn pyramid_shapes_and_constants() {
    let p = build_pyramid(&Tensor::full([1, 3, 256, 256], 0.625)).unwrap();
    let sizes: Vec<usize> = p.levels().iter().map(|t| t.shape().h).collect();
    assert_eq!(sizes, [256, 128, 64]);
    assert!(p.levels().iter().all(|t| t.data().iter().all(|&v| v == 0.625)));
    assert!(matches!(build_pyramid(&Tensor::zeros([1, 3, 10, 8])), Err(CoreError::Input(_))));
}

#[test]
fn pyramid_matches_direct_bilinear_weights() {
    let img = random_image(8, 8, 4);
    let p = build_pyramid(&img).unwrap();
    // half-pixel alignment puts every level-2 sample at the centre of a 2x2 block
    for c in 0..3 {
        for y in 0..4 {
            for x in 0..4 {
                let mut acc = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    acc += 0.25 * f64::from(img.at(0, c, 2 * y + dy, 2 * x + dx));
                }
                assert!((f64::from(p.level(2).at(0, c, y, x)) - acc).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn exact_size_patch_without_flip_is_identity() {
    let pair = BlurPair::new(random_image(16, 16, 1), random_image(16, 16, 2)).unwrap();
    let s = sample_patch(&pair, 16, 0.0, &mut rng(0)).unwrap();
    assert_eq!(s.blurry, build_pyramid(&pair.blurry).unwrap());
    assert_eq!(s.sharp, build_pyramid(&pair.sharp).unwrap());
}

#[test]
fn double_flip_restores_the_patch() {
    let pair = BlurPair::new(random_image(16, 16, 1), random_image(16, 16, 2)).unwrap();
    let once = sample_patch(&pair, 16, 1.0, &mut rng(0)).unwrap();
    assert_ne!(once.blurry.level(1), &pair.blurry);
    let flipped = BlurPair::new(once.blurry.level(1).clone(), once.sharp.level(1).clone()).unwrap();
    let twice = sample_patch(&flipped, 16, 1.0, &mut rng(0)).unwrap();
    assert_eq!(twice.blurry.level(1), &pair.blurry);
    assert_eq!(twice.sharp.level(1), &pair.sharp);
}

#[test]
fn augmentation_keeps_pairs_aligned() {
    let mut marker = Tensor::zeros([1, 3, 24, 28]);
    marker.set(0, 0, 13, 5, 1.0);
    let pair = BlurPair::new(marker.clone(), marker.scale(0.5)).unwrap();
    let mut r = rng(17);
    for _ in 0..50 {
        let s = sample_patch(&pair, 16, 0.5, &mut r).unwrap();
        for k in 1..=3 {
            assert_eq!(s.sharp.level(k), &s.blurry.level(k).scale(0.5));
        }
    }
}

#[test]
fn crop_offsets_are_uniform() {
    // 5 x 4 valid offsets, 10^4 draws
    let (h, w, patch) = (20, 19, 16);
    let mut counts = [[0usize; 4]; 5];
    let mut r = rng(2024);
    let draws = 10_000;
    for _ in 0..draws {
        let win = crop_window(h, w, patch, 0.5, &mut r).unwrap();
        counts[win.y][win.x] += 1;
    }
    let expected = draws as f64 / 20.0;
    let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 19 degrees of freedom
    assert!(chi2 < 36.191, "chi-square {chi2}");
}

#[test]
fn patch_larger_than_image_is_rejected() {
    let pair = BlurPair::new(random_image(8, 12, 1), random_image(8, 12, 1)).unwrap();
    assert!(matches!(sample_patch(&pair, 10, 0.5, &mut rng(0)), Err(CoreError::Input(_))));
    assert!(matches!(crop_window(16, 16, 8, 1.5, &mut rng(0)), Err(CoreError::Config(_))));
}

#[test]
fn collate_stacks_levels() {
    let pair = BlurPair::new(random_image(16, 16, 1), random_image(16, 16, 2)).unwrap();
    let mut r = rng(3);
    let samples: Vec<_> = (0..4).map(|_| sample_patch(&pair, 8, 0.5, &mut r).unwrap()).collect();
    let (b, s) = collate(&samples).unwrap();
    assert_eq!(b[0].shape(), Shape::new(4, 3, 8, 8));
    assert_eq!(s[2].shape(), Shape::new(4, 3, 2, 2));
    assert_eq!(b[1].item(2), samples[2].blurry.level(2).data());
}

#[test]
fn png_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let img = image::RgbImage::from_fn(7, 5, |x, y| image::Rgb([(x * 37 + y) as u8, (y * 51) as u8, 128]));
    let path = dir.path().join("a.png");
    img.save(&path).unwrap();
    let t = decode_image(&path).unwrap();
    assert_eq!(t.shape(), Shape::new(1, 3, 5, 7));
    assert!((t.at(0, 2, 0, 0) - 0.501_960_8).abs() < 1e-6);
    let out = dir.path().join("b.png");
    encode_image(&t, &out).unwrap();
    assert_eq!(image::open(&out).unwrap().to_rgb8(), img);
}

#[test]
fn quantization_rounds_half_away_and_clamps() {
    let t = Tensor::from_vec([1, 3, 1, 2], vec![0.5 / 255.0, 1.49 / 255.0, -0.2, 1.7, 2.5 / 255.0, 254.5 / 255.0]).unwrap();
    let img = to_rgb8(&t).unwrap();
    assert_eq!(img.get_pixel(0, 0).0, [1, 0, 3]);
    assert_eq!(img.get_pixel(1, 0).0, [1, 255, 255]);
    assert!(to_rgb8(&Tensor::zeros([2, 3, 1, 1])).is_err());
}

#[test]
fn decode_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("x.png");
    fs::write(&bogus, b"not a png").unwrap();
    assert!(decode_image(&bogus).unwrap_err().to_string().contains("x.png"));
    assert!(matches!(decode_image(&dir.path().join("missing.png")), Err(CoreError::Io { .. })));
}

fn write_png(path: &std::path::Path, t: &Tensor) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    encode_image(t, path).unwrap();
}

#[test]
fn manifest_loading_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_png(&root.join("b/0.png"), &random_image(8, 8, 1));
    write_png(&root.join("s/0.png"), &random_image(8, 8, 2));
    write_png(&root.join("s/small.png"), &random_image(4, 8, 2));
    for i in 0..7 {
        write_png(&root.join(format!("seq/f{i}.png")), &Tensor::full([1, 3, 4, 4], i as f32 / 10.0));
    }
    let text = "# pairs\nSPLIT\ttest\nb/0.png\ts/0.png\nb/0.png\ts/missing.png\n\nSEQ\tseq\t3\nb/0.png\ts/small.png\nSEQ\tseq\t9\n";
    let path = root.join("m.tsv");
    fs::write(&path, text).unwrap();
    let m = load_manifest(&path).unwrap();
    assert_eq!(m.split, Some(Split::Test));
    assert_eq!(m.entries.len(), 5);
    let (pairs, report) = m.load();
    assert_eq!(report.records, 5);
    let bad: Vec<usize> = report.problems.iter().map(|p| p.line).collect();
    assert_eq!(bad, [4, 7, 8]);
    assert!(report.problems[0].message.contains("missing.png"));
    // one explicit pair plus two windows of three frames
    assert_eq!(pairs.len(), 3);
    assert_eq!(pairs[1].id, "seq#0");
    assert!((pairs[2].pair.blurry.data()[0] - 0.4).abs() < 1e-2);
    assert!(report.to_string().contains("line 8"));

    let reparsed = Manifest::parse(&m.render(), m.root.clone()).unwrap();
    assert_eq!(reparsed.entries.iter().map(|e| &e.record).collect::<Vec<_>>(), m.entries.iter().map(|e| &e.record).collect::<Vec<_>>());
}

#[test]
fn manifest_syntax_errors_carry_line_numbers() {
    for (text, line) in [("a\tb\nonly-one-field\n", 2), ("SEQ\tdir\tseven\n", 1), ("SPLIT\tval\n", 1), ("SPLIT\ttest\nSPLIT\ttrain\n", 2)] {
        let err = Manifest::parse(text, PathBuf::new()).unwrap_err();
        assert_eq!(err.0, line, "{text:?}: {}", err.1);
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.tsv");
    fs::write(&p, "x\n").unwrap();
    assert!(matches!(load_manifest(&p), Err(CoreError::Manifest { line: 1, .. })));
}

#[test]
fn synthetic_pairs_are_valid_and_reproducible() {
    let a = synthetic::pairs(2, 16, 7, 1.0, 5).unwrap();
    let b = synthetic::pairs(2, 16, 7, 1.0, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
    for p in &a {
        assert!(p.blurry.data().iter().chain(p.sharp.data()).all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(p.blurry, p.sharp);
    }
    let still = synthetic::pairs(1, 16, 7, 0.0, 5).unwrap();
    let diff = still[0].blurry.sub(&still[0].sharp).unwrap().max_abs();
    assert!(diff < 1e-6);
}
