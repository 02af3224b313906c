use pinnlab::loss::{residuals_nsch, JetSource, Sample};
use pinnlab::netjet::load_checkpoint;
use pinnlab::problems::ProblemConfig;
use std::path::Path;

fn main() {
    let (header, params) = load_checkpoint(Path::new("/tmp/p1/ckpt_final.json")).unwrap();
    let problem = ProblemConfig::manufactured_nsch_toy();
    let src = JetSource::Network { spec: &header.spec, params: &params };
    // mean squared transport residual per time slab and per |x|-corner band
    let nt = 8;
    let mut slab = vec![0.0f64; nt];
    let mut slab_n = vec![0usize; nt];
    let mut corner = 0.0f64;
    let mut corner_n = 0usize;
    let mut bulk = 0.0f64;
    let mut bulk_n = 0usize;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40000 {
        let p = [rng.gen::<f64>(), rng.gen::<f64>(), 2.0 * rng.gen::<f64>()];
        let jets = src.field_jets(&problem, p).unwrap();
        let r = residuals_nsch(&jets, &problem, Sample::Interior { point: p });
        let v = r.r_ch * r.r_ch;
        let k = ((p[2] / 0.25) as usize).min(nt - 1);
        slab[k] += v;
        slab_n[k] += 1;
        if p[0] > 0.75 && p[1] > 0.75 && p[2] > 1.5 {
            corner += v; corner_n += 1;
        } else {
            bulk += v; bulk_n += 1;
        }
    }
    println!("transport residual mean-square by time slab:");
    for k in 0..nt {
        println!("  t in [{:.2},{:.2}): {:.3e}", 0.25*k as f64, 0.25*(k+1) as f64, slab[k]/slab_n[k] as f64);
    }
    println!("corner (x>0.75,y>0.75,t>1.5): {:.3e} (n={})", corner/corner_n as f64, corner_n);
    println!("elsewhere: {:.3e}", bulk/bulk_n as f64);
}
