use super::*;
use mimo_tensor::resize::bilinear;
use mimo_tensor::Shape;

type T64 = Tensor<f64>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct nested-loop cross-correlation with zero padding.
fn naive_conv(x: &T64, w: &T64, b: &T64, stride: usize, pad: usize) -> T64 {
    let (s, ws) = (x.shape(), w.shape());
    let oh = (s.h + 2 * pad - ws.h) / stride + 1;
    let ow = (s.w + 2 * pad - ws.w) / stride + 1;
    T64::from_fn([s.n, ws.n, oh, ow], |n, o, y, xx| {
        let mut acc = b.data()[o];
        for i in 0..s.c {
            for ky in 0..ws.h {
                for kx in 0..ws.w {
                    let (iy, ix) = ((y * stride + ky) as isize - pad as isize, (xx * stride + kx) as isize - pad as isize);
                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                        acc += w.at(o, i, ky, kx) * x.at(n, i, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Direct transposed convolution by scattering each input pixel.
fn naive_conv_t(x: &T64, w: &T64, b: &T64, stride: usize, pad: usize) -> T64 {
    let (s, ws) = (x.shape(), w.shape());
    let (oh, ow) = (stride * s.h, stride * s.w);
    let mut out = T64::from_fn([s.n, ws.c, oh, ow], |_, o, _, _| b.data()[o]);
    for n in 0..s.n {
        for i in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    for o in 0..ws.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let (oy, ox) = ((y * stride + ky) as isize - pad as isize, (xx * stride + kx) as isize - pad as isize);
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    let v = out.at(n, o, oy as usize, ox as usize) + w.at(i, o, ky, kx) * x.at(n, i, y, xx);
                                    out.set(n, o, oy as usize, ox as usize, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn relu(x: &T64) -> T64 {
    x.map(|v| v.max(0.0))
}

struct Oracle<'a>(&'a MimoUNet<f64>);

impl Oracle<'_> {
    fn p(&self, name: &str) -> &T64 {
        let id = self.0.params().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.0.params().value(id)
    }

    fn conv(&self, name: &str, x: &T64, stride: usize) -> T64 {
        let w = self.p(&format!("{name}.weight"));
        naive_conv(x, w, self.p(&format!("{name}.bias")), stride, w.shape().h / 2)
    }

    fn up(&self, name: &str, x: &T64) -> T64 {
        naive_conv_t(x, self.p(&format!("{name}.weight")), self.p(&format!("{name}.bias")), 2, 1)
    }

    fn res(&self, prefix: &str, mut x: T64) -> T64 {
        for i in 0..self.0.config().num_resblocks {
            let h = relu(&self.conv(&format!("{prefix}.res{i}.conv1"), &x, 1));
            x = x.add(&self.conv(&format!("{prefix}.res{i}.conv2"), &h, 1)).unwrap();
        }
        x
    }

    fn scm(&self, level: usize, b: &T64) -> T64 {
        let mut x = b.clone();
        for i in 0..4 {
            x = relu(&self.conv(&format!("scm{level}.conv{i}"), &x, 1));
        }
        self.conv(&format!("scm{level}.out"), &x.concat_channels(b).unwrap(), 1)
    }

    fn fam(&self, level: usize, d: &T64, s: &T64) -> T64 {
        d.add(&self.conv(&format!("fam{level}.conv"), &d.mul(s).unwrap(), 1)).unwrap()
    }

    fn aff(&self, n: usize, eb: &[T64; 3]) -> T64 {
        let t = eb[n - 1].shape();
        let r: Vec<T64> = eb.iter().map(|e| bilinear(e, t.h, t.w).unwrap()).collect();
        let cat = r[0].concat_channels(&r[1]).unwrap().concat_channels(&r[2]).unwrap();
        let x = relu(&self.conv(&format!("aff{n}.squeeze"), &cat, 1));
        self.conv(&format!("aff{n}.conv"), &x, 1)
    }

    /// Full forward pass, all toggles on, fusion by attention module.
    fn forward(&self, b1: &T64) -> Vec<T64> {
        let s = b1.shape();
        let b2 = bilinear(b1, s.h / 2, s.w / 2).unwrap();
        let b3 = bilinear(&b2, s.h / 4, s.w / 4).unwrap();
        let eb1 = self.res("eb1", relu(&self.conv("eb1.in", b1, 1)));
        let d2 = relu(&self.conv("down2", &eb1, 2));
        let eb2 = self.res("eb2", self.fam(2, &d2, &self.scm(2, &b2)));
        let d3 = relu(&self.conv("down3", &eb2, 2));
        let eb3 = self.res("eb3", self.fam(3, &d3, &self.scm(3, &b3)));
        let eb = [eb1, eb2, eb3];
        let db3 = self.res("db3", eb[2].clone());
        let out3 = self.conv("head3", &db3, 1).add(&b3).unwrap();
        let m2 = self.aff(2, &eb).concat_channels(&relu(&self.up("up2", &db3))).unwrap();
        let db2 = self.res("db2", relu(&self.conv("merge2", &m2, 1)));
        let out2 = self.conv("head2", &db2, 1).add(&b2).unwrap();
        let m1 = self.aff(1, &eb).concat_channels(&relu(&self.up("up1", &db2))).unwrap();
        let db1 = self.res("db1", relu(&self.conv("merge1", &m1, 1)));
        let out1 = self.conv("head1", &db1, 1).add(b1).unwrap();
        vec![out1, out2, out3]
    }
}

fn assert_close(a: &T64, b: &T64, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    let scale = b.max_abs().max(1.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
    }
}

/// Random weights and biases, so bias paths are exercised too.
fn random_model(config: ModelConfig, seed: u64) -> MimoUNet<f64> {
    let mut m = MimoUNet::<f64>::with_seed(config, seed).unwrap();
    let mut r = rng(seed ^ 0xb1a5);
    for p in m.params_mut().iter_mut() {
        if p.name.ends_with(".bias") {
            p.value = T64::randn(p.value.shape(), 0.1, &mut r);
        }
    }
    m
}

fn tiny() -> ModelConfig {
    ModelConfig::new(4, 1)
}

#[test]
fn hand_enumerated_count_for_unit_width() {
    // conv(ci, co, k) = co*ci*k*k + co
    let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
    let eb_in = conv(3, 1, 3);
    let res = |c| 2 * conv(c, c, 3);
    let stacks = 2 * (res(1) + res(2) + res(4));
    let down = conv(1, 2, 3) + conv(2, 4, 3);
    // level 2: widths 1, 1, 1, 1; level 3: 1, 2, 2, 1
    let scm2 = conv(3, 1, 3) + conv(1, 1, 1) + conv(1, 1, 3) + conv(1, 1, 1) + conv(4, 2, 1);
    let scm3 = conv(3, 1, 3) + conv(1, 2, 1) + conv(2, 2, 3) + conv(2, 1, 1) + conv(4, 4, 1);
    let fam = conv(2, 2, 3) + conv(4, 4, 3);
    let aff = conv(7, 1, 1) + conv(1, 1, 3) + conv(7, 2, 1) + conv(2, 2, 3);
    let up = (4 * 2 * 16 + 2) + (2 * 16 + 1);
    let merge = conv(2, 1, 1) + conv(4, 2, 1);
    let heads = conv(1, 3, 3) + conv(2, 3, 3) + conv(4, 3, 3);
    let expected = eb_in + stacks + down + scm2 + scm3 + fam + aff + up + merge + heads;
    assert_eq!(expected, 1685);
    assert_eq!(count_params(&ModelConfig::new(1, 1)), expected);
}

#[test]
fn preset_counts() {
    let full = count_params(&Variant::MimoUNet.config());
    let plus = count_params(&Variant::MimoUNetPlus.config());
    assert_eq!(full, 6_807_171);
    assert_eq!(plus, 16_107_651);
    assert!((6_460_000..=7_140_000).contains(&full));
    assert!((15_300_000..=16_900_000).contains(&plus));
}

#[test]
fn count_matches_allocated_model() {
    let config = ModelConfig {
        fusion: FusionMode::Concat,
        ..ModelConfig::new(2, 2)
    };
    let m = MimoUNet::<f32>::zeros(config).unwrap();
    assert_eq!(m.num_params(), count_params(&config));
}

#[test]
fn count_ordering_across_toggles() {
    let base = ModelConfig::new(8, 2);
    assert!(count_params(&ModelConfig::new(8, 3)) > count_params(&base));
    assert!(count_params(&ModelConfig::new(9, 2)) > count_params(&base));
    let off = base.baseline();
    let heads = conv_count(base.channels(2), 3) + conv_count(base.channels(3), 3);
    for (mise, mosd, aff) in [(false, false, false), (false, true, false), (true, false, true), (false, false, true)] {
        let c = ModelConfig {
            enable_mise: mise,
            enable_mosd: mosd,
            enable_aff: aff,
            ..off
        };
        let with = |f: fn(&mut ModelConfig)| {
            let mut d = c;
            f(&mut d);
            count_params(&d)
        };
        if !mise {
            assert!(with(|d| d.enable_mise = true) > count_params(&c));
        }
        if !aff {
            assert!(with(|d| d.enable_aff = true) > count_params(&c));
        }
        if !mosd {
            assert_eq!(with(|d| d.enable_mosd = true), count_params(&c) + heads);
        }
    }
}

fn conv_count(c_in: usize, k: usize) -> usize {
    3 * c_in * k * k + 3
}

#[test]
fn zero_network_returns_its_pyramid_exactly() {
    for config in [tiny(), tiny().baseline(), ModelConfig { fusion: FusionMode::Sum, ..tiny() }] {
        let m = MimoUNet::<f32>::zeros(config).unwrap();
        let x = Tensor::<f32>::rand_uniform([2, 3, 16, 12], 0.0, 1.0, &mut rng(3));
        let mut g = Graph::new();
        let b1 = g.input(x);
        let out = m.forward(&mut g, b1).unwrap();
        assert_eq!(out.restored.len(), config.num_outputs());
        for (r, b) in out.restored.iter().zip(out.pyramid) {
            assert_eq!(g.value(*r), g.value(b));
        }
    }
}

#[test]
fn output_shapes_follow_the_input() {
    let m = MimoUNet::<f32>::with_seed(tiny(), 1).unwrap();
    let x = Tensor::<f32>::zeros([1, 3, 64, 64]);
    let outs = m.predict(&x).unwrap();
    let shapes: Vec<Shape> = outs.iter().map(|t| t.shape()).collect();
    assert_eq!(shapes, [Shape::new(1, 3, 64, 64), Shape::new(1, 3, 32, 32), Shape::new(1, 3, 16, 16)]);
    let outs = m.predict(&Tensor::zeros([1, 3, 12, 20])).unwrap();
    assert_eq!(outs[2].shape(), Shape::new(1, 3, 3, 5));
}

#[test]
fn level_shapes_for_base_width() {
    let m = MimoUNet::<f32>::zeros(ModelConfig::new(32, 1)).unwrap();
    let mut g = Graph::new();
    let b1 = g.input(Tensor::zeros([1, 3, 32, 32]));
    let pyr = m.input_pyramid(&mut g, b1).unwrap();
    let eb = m.encode(&mut g, pyr).unwrap();
    let shapes: Vec<Shape> = eb.iter().map(|&v| g.shape(v)).collect();
    assert_eq!(shapes, [Shape::new(1, 32, 32, 32), Shape::new(1, 64, 16, 16), Shape::new(1, 128, 8, 8)]);
    let scm = m.scm(&mut g, 2, pyr[1]).unwrap();
    assert_eq!(g.shape(scm), Shape::new(1, 64, 16, 16));
    let aff = m.aff(&mut g, 1, eb).unwrap();
    assert_eq!(g.shape(aff), Shape::new(1, 32, 32, 32));
}

#[test]
fn indivisible_input_is_an_input_error() {
    let m = MimoUNet::<f32>::zeros(tiny()).unwrap();
    let err = m.predict(&Tensor::zeros([1, 3, 18, 16])).unwrap_err();
    assert!(matches!(err, CoreError::Input(ref msg) if msg.contains("pad")), "{err}");
}

#[test]
fn module_level_errors() {
    let m = MimoUNet::<f32>::zeros(tiny()).unwrap();
    let mut g = Graph::new();
    let e: Vec<Var> = [(4, 8), (8, 4), (16, 2)]
        .iter()
        .map(|&(c, s)| g.input(Tensor::zeros([1, c, s, s])))
        .collect();
    assert!(matches!(m.aff(&mut g, 3, [e[0], e[1], e[2]]), Err(CoreError::Usage(_))));
    let gray = g.input(Tensor::zeros([1, 1, 4, 4]));
    assert!(matches!(m.scm(&mut g, 2, gray), Err(CoreError::Config(_))));
    assert!(matches!(m.fuse(&mut g, 2, e[1], e[0]), Err(CoreError::Config(_))));
}

#[test]
fn composed_module_oracles() {
    let m = random_model(tiny(), 11);
    let o = Oracle(&m);
    let mut r = rng(12);
    let b2 = T64::randn([2, 3, 6, 6], 1.0, &mut r);
    let d2 = T64::randn([2, 8, 6, 6], 1.0, &mut r);
    let x1 = T64::randn([2, 4, 12, 12], 1.0, &mut r);

    let mut g = Graph::new();
    let (vb, vd, vx) = (g.input(b2.clone()), g.input(d2.clone()), g.input(x1.clone()));
    let scm = m.scm(&mut g, 2, vb).unwrap();
    assert_close(g.value(scm), &o.scm(2, &b2), 1e-9);
    let fam = m.fuse(&mut g, 2, vd, scm).unwrap();
    assert_close(g.value(fam), &o.fam(2, &d2, &o.scm(2, &b2)), 1e-9);
    let eb = m.encoder_block(&mut g, 2, vd).unwrap();
    assert_close(g.value(eb), &o.res("eb2", d2.clone()), 1e-9);
    let db = m.decoder_block(&mut g, 1, vx, Some(vd)).unwrap();
    let merged = x1.concat_channels(&relu(&o.up("up1", &d2))).unwrap();
    assert_close(g.value(db), &o.res("db1", relu(&o.conv("merge1", &merged, 1))), 1e-9);

    let eb: [T64; 3] = [
        T64::randn([1, 4, 8, 8], 1.0, &mut r),
        T64::randn([1, 8, 4, 4], 1.0, &mut r),
        T64::randn([1, 16, 2, 2], 1.0, &mut r),
    ];
    let vars = eb.clone().map(|t| g.input(t));
    for n in 1..=2 {
        let a = m.aff(&mut g, n, vars).unwrap();
        assert_close(g.value(a), &o.aff(n, &eb), 1e-9);
    }
}

#[test]
fn full_forward_matches_step_by_step_oracle() {
    let m = random_model(tiny(), 21);
    let x = T64::rand_uniform([1, 3, 16, 8], 0.0, 1.0, &mut rng(22));
    let got = m.predict(&x).unwrap();
    for (a, b) in got.iter().zip(Oracle(&m).forward(&x)) {
        assert_close(a, &b, 1e-9);
    }
}

#[test]
fn zero_residual_stack_is_identity() {
    let m = MimoUNet::<f64>::zeros(tiny()).unwrap();
    let x = T64::randn([1, 8, 4, 4], 1.0, &mut rng(5));
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let y = m.encoder_block(&mut g, 2, v).unwrap();
    assert_eq!(g.value(y), &x);
    let deeper = g.input(Tensor::full([1, 16, 2, 2], 1.0));
    let y = m.decoder_block(&mut g, 2, v, Some(deeper)).unwrap();
    // zero merge weights give relu(0) = 0 before the stack
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn fusion_modes() {
    let mut r = rng(31);
    let d = T64::randn([1, 8, 4, 4], 1.0, &mut r);
    let zero = T64::zeros([1, 8, 4, 4]);
    for mode in [FusionMode::Fam, FusionMode::Sum, FusionMode::Concat] {
        let m = random_model(ModelConfig { fusion: mode, ..tiny() }, 32);
        let mut g = Graph::new();
        let (vd, vz) = (g.input(d.clone()), g.input(zero.clone()));
        let y = m.fuse(&mut g, 2, vd, vz).unwrap();
        assert_eq!(g.shape(y).c, 8);
        if mode == FusionMode::Sum {
            assert_eq!(g.value(y), &d);
        }
        if mode == FusionMode::Fam {
            // zero attention input leaves only the conv bias
            let bias = Oracle(&m).p("fam2.conv.bias").clone();
            let expect = T64::from_fn(d.shape(), |n, c, y, x| d.at(n, c, y, x) + bias.data()[c]);
            assert_close(g.value(y), &expect, 1e-12);
        }
    }
    assert!("attention".parse::<FusionMode>().is_err());
    assert_eq!("concat".parse::<FusionMode>().unwrap(), FusionMode::Concat);
}

#[test]
fn single_scale_encoder_ignores_coarse_inputs() {
    let config = ModelConfig {
        enable_mise: false,
        ..tiny()
    };
    let m = MimoUNet::<f64>::with_seed(config, 41).unwrap();
    assert!(m.params().iter().all(|p| !p.name.starts_with("scm") && !p.name.starts_with("fam")));
    let mut r = rng(42);
    let b1 = T64::randn([1, 3, 8, 8], 1.0, &mut r);
    let run = |b2: T64, b3: T64| {
        let mut g = Graph::new();
        let pyr = [g.input(b1.clone()), g.input(b2), g.input(b3)];
        let eb = m.encode(&mut g, pyr).unwrap();
        eb.map(|v| g.value(v).clone())
    };
    let a = run(T64::zeros([1, 3, 4, 4]), T64::zeros([1, 3, 2, 2]));
    let b = run(T64::randn([1, 3, 4, 4], 5.0, &mut r), T64::full([1, 3, 2, 2], f64::NAN));
    assert_eq!(a, b);
}

#[test]
fn every_parameter_receives_gradient() {
    for config in [tiny(), ModelConfig { fusion: FusionMode::Concat, ..tiny() }] {
        let mut m = random_model(config, 51);
        let mut r = rng(52);
        let x = T64::rand_uniform([1, 3, 16, 16], 0.0, 1.0, &mut r);
        let mut g = Graph::new();
        let b1 = g.input(x);
        let out = m.forward(&mut g, b1).unwrap();
        let mut loss = None;
        for &o in &out.restored {
            let t = g.input(T64::rand_uniform(g.shape(o), 0.0, 1.0, &mut r));
            let l = g.l1_mean(o, t).unwrap();
            loss = Some(match loss {
                None => l,
                Some(acc) => g.add(acc, l).unwrap(),
            });
        }
        g.backward_into(loss.unwrap(), m.params_mut()).unwrap();
        for p in m.params().iter() {
            assert!(p.grad.max_abs() > 0.0, "{} has zero gradient", p.name);
        }
    }
}

#[test]
fn from_params_validates_names_and_shapes() {
    let m = MimoUNet::<f32>::zeros(tiny()).unwrap();
    assert!(MimoUNet::from_params(tiny(), m.params().clone()).is_ok());
    assert!(MimoUNet::from_params(ModelConfig::new(4, 2), m.params().clone()).is_err());
    let mut store = ParamStore::new();
    for p in m.params().iter() {
        let v = if p.name == "head1.bias" { Tensor::zeros([4, 1, 1, 1]) } else { p.value.clone() };
        store.add(p.name.clone(), v);
    }
    let err = MimoUNet::from_params(tiny(), store).unwrap_err().to_string();
    assert!(err.contains("head1.bias"), "{err}");
}

#[test]
fn variants() {
    assert_eq!(Variant::MimoUNet.config(), ModelConfig::new(32, 8));
    assert_eq!(Variant::MimoUNetPlus.config(), ModelConfig::new(32, 20));
    assert_eq!(Variant::Tiny.config(), ModelConfig::new(8, 2));
    assert_eq!("mimo-unet-plus".parse::<Variant>().unwrap(), Variant::MimoUNetPlus);
    assert!("resnet".parse::<Variant>().is_err());
    assert!(Variant::Tiny.tag(false).contains("not a published variant"));
    assert_eq!(Variant::MimoUNetPlus.tag(true), "mimo-unet-plus-plus");
    assert!(ModelConfig::new(0, 1).validate().is_err());
}
