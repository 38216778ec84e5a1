fn main() {
    let xs: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
    let fit = globopt::spline::fit_interpolating_spline(&xs, &vec![1.0; 8]).unwrap();
    for c in &fit.coeffs { print!("{:.20e} ", c); }
    println!();
    let mut worst = 0.0f64; let mut wx = 0.0;
    for k in 0..=100 { let x = k as f64/100.0; let v = fit.eval(x).unwrap(); if (v-1.0).abs() > worst { worst = (v-1.0).abs(); wx = x; } }
    println!("worst dev {:e} at {}", worst, wx);
}
