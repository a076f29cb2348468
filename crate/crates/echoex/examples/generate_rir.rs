//! Simulate a room impulse response with the image method, verify its
//! decay against the request, and write it to a WAV file.
//!
//! ```bash
//! cargo run --example generate_rir
//! ```

use echoex::rir::{
    bandlimited_peak, measured_t60, simulate_rir_default, RirRequest, RoomSpec, SOUND_SPEED,
};
use echoex::wav::write_wav_f32;

fn main() -> echoex::Result<()> {
    let request = RirRequest {
        room: RoomSpec::new(4.0, 6.0, 3.0),
        t60: 0.35,
        source_pos: [1.2, 2.0, 1.4],
        mic_pos: [2.6, 4.1, 1.6],
        sample_rate: 16000,
        sound_speed: SOUND_SPEED,
    };
    let rir = simulate_rir_default(&request)?;
    println!("simulated {} taps for a {:.2} m path", rir.taps.len(), request.distance());

    let (pos, amp) = bandlimited_peak(&rir.taps);
    let direct_delay = request.distance() / SOUND_SPEED * request.sample_rate as f64;
    println!("strongest arrival: {:.5} at {:.2} samples (direct-path delay {:.2})", amp, pos, direct_delay);
    println!("requested T60 {:.2} s, Schroeder-measured {:.3} s", request.t60, measured_t60(&rir)?);

    write_wav_f32("rir_4x6x3_t035.wav", &rir.as_waveform())?;
    println!("wrote rir_4x6x3_t035.wav");
    Ok(())
}
