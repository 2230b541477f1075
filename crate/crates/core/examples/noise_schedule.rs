//! Prints a few rows of the default linear schedule: ᾱ, SNR, posterior
//! variance and the P2 weight.

use diffseg::schedule::ScheduleParams;

fn main() -> diffseg::Result<()> {
    let params = ScheduleParams::default();
    let s = params.build()?;
    println!("T = {}, beta in [{}, {}], P2 k = {}, gamma = {}", s.timesteps(), params.beta_start, params.beta_end, s.p2_k(), s.p2_gamma());
    println!("{:>5} {:>10} {:>12} {:>12} {:>12} {:>10}", "t", "beta", "alpha_bar", "snr", "post_var", "p2");
    for t in [1, 2, 10, 50, 100, 250, 500, 750, 1000] {
        println!(
            "{t:>5} {:>10.6} {:>12.6e} {:>12.4e} {:>12.4e} {:>10.5}",
            s.beta(t),
            s.alpha_bar(t),
            s.snr(t),
            s.posterior_variance(t),
            s.p2_weight(t)?
        );
    }
    Ok(())
}
