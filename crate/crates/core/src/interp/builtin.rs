//! Flow-based frame interpolation.

use crate::error::{Error, Result};
use crate::image::{bilinear, Image};

use super::flow::{estimate_flow_pair, FlowField};
use super::{check_fractions, Capabilities, Interpolator, PairContext, PairFrames};

/// Splat weight given to sources whose flow is untrusted.
const SPLAT_FLOOR: f32 = 1e-2;
/// Blend weight floor, so flat regions fall back to the plain time blend.
const BLEND_FLOOR: f32 = 5e-2;

/// Displacement from each pixel at the intermediate time back to the source
/// frame, found by forward-splatting the source flow scaled by `s`. Pixels no
/// source lands on fall back to the flow at the same location.
fn project(flow: &FlowField, s: f32) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (flow.width, flow.height);
    let n = w * h;
    let mut acc = vec![[0.0f32; 3]; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (fu, fv) = (flow.u[i], flow.v[i]);
            let tx = x as f32 + s * fu;
            let ty = y as f32 + s * fv;
            let wt = flow.confidence[i] + SPLAT_FLOOR;
            let (x0, y0) = (tx.floor(), ty.floor());
            let (ax, ay) = (tx - x0, ty - y0);
            for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
                for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
                    let xx = x0 as i64 + dx;
                    let yy = y0 as i64 + dy;
                    let bw = wx * wy * wt;
                    if bw <= 0.0 || xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    let a = &mut acc[yy as usize * w + xx as usize];
                    a[0] += bw * fu;
                    a[1] += bw * fv;
                    a[2] += bw;
                }
            }
        }
    }
    let mut du = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for i in 0..n {
        let [su, sv, sw] = acc[i];
        let (fu, fv) = if sw > 1e-6 {
            (su / sw, sv / sw)
        } else {
            (flow.u[i], flow.v[i])
        };
        du[i] = -s * fu;
        dv[i] = -s * fv;
    }
    (du, dv)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Range(format!("interpolation fraction {tau} outside [0, 1]")));
    }
    Ok(())
}

/// Interpolates with precomputed flows `fwd` (a→b) and `bwd` (b→a).
pub fn interpolate_with_flows(a: &Image, b: &Image, fwd: &FlowField, bwd: &FlowField, tau: f64) -> Result<Image> {
    check_tau(tau)?;
    a.check_same_shape(b)?;
    if tau == 0.0 {
        return Ok(a.clone());
    }
    if tau == 1.0 {
        return Ok(b.clone());
    }
    let t = tau as f32;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let (dau, dav) = project(fwd, t);
    let (dbu, dbv) = project(bwd, 1.0 - t);
    let mut out = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (ax, ay) = (x as f32 + dau[i], y as f32 + dav[i]);
            let (bx, by) = (x as f32 + dbu[i], y as f32 + dbv[i]);
            let ca = bilinear(&fwd.confidence, w, h, ax, ay);
            let cb = bilinear(&bwd.confidence, w, h, bx, by);
            let wa = (1.0 - t) * (BLEND_FLOOR + ca);
            let wb = t * (BLEND_FLOOR + cb);
            let mix = wb / (wa + wb);
            for c in 0..ch {
                let va = bilinear(a.plane(c), w, h, ax, ay);
                let vb = bilinear(b.plane(c), w, h, bx, by);
                out.plane_mut(c)[i] = va + mix * (vb - va);
            }
        }
    }
    Ok(out)
}

/// Frame at fraction `tau` between `a` and `b`.
pub fn interpolate(a: &Image, b: &Image, tau: f64) -> Result<Image> {
    check_tau(tau)?;
    a.check_same_shape(b)?;
    if tau == 0.0 {
        return Ok(a.clone());
    }
    if tau == 1.0 {
        return Ok(b.clone());
    }
    let (fwd, bwd) = estimate_flow_pair(a, b)?;
    interpolate_with_flows(a, b, &fwd, &bwd, tau)
}

/// The built-in flow interpolator. Stateless, so one instance serves all workers.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuiltinInterpolator;

struct BuiltinFrames<'a> {
    a: &'a Image,
    b: &'a Image,
    fractions: Vec<f64>,
    flows: Option<(FlowField, FlowField)>,
}

impl PairFrames for BuiltinFrames<'_> {
    fn len(&self) -> usize {
        self.fractions.len()
    }

    fn frame(&mut self, index: usize) -> Result<Image> {
        let tau = self.fractions[index];
        if tau == 0.0 {
            return Ok(self.a.clone());
        }
        if tau == 1.0 {
            return Ok(self.b.clone());
        }
        if self.flows.is_none() {
            self.flows = Some(estimate_flow_pair(self.a, self.b)?);
        }
        let (fwd, bwd) = self.flows.as_ref().unwrap();
        interpolate_with_flows(self.a, self.b, fwd, bwd, tau)
    }
}

impl Interpolator for BuiltinInterpolator {
    fn name(&self) -> &str {
        "builtin"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_displacement: Some(40.0),
            max_batch: None,
            concurrent: true,
        }
    }

    fn begin_pair<'a>(
        &'a self,
        a: &'a Image,
        b: &'a Image,
        fractions: &[f64],
        _ctx: &PairContext,
    ) -> Result<Box<dyn PairFrames + 'a>> {
        a.check_same_shape(b)?;
        check_fractions(fractions)?;
        Ok(Box::new(BuiltinFrames {
            a,
            b,
            fractions: fractions.to_vec(),
            flows: None,
        }))
    }
}
