//! Prints the warmup-then-cosine learning-rate schedule.

use contra_nncore::ScheduleConfig;

fn main() -> contra_nncore::Result<()> {
    let s = ScheduleConfig::default();
    for epoch in (0..=s.total_epochs).step_by(5) {
        let lr = s.lr_at(epoch)?;
        println!("{epoch:>3}  {lr:.4}  {}", "*".repeat((lr * 200.0) as usize));
    }
    Ok(())
}
