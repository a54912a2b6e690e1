//! Sessions, synthetic corpus generation, windowing and splits.

mod io;
mod session;
mod split;
mod synth;
mod window;

pub use io::{decode_session, encode_session, read_session, write_atomic, write_session};
pub(crate) use io::{encode_header, push_f64s, read_header, take_f64s};
pub use session::{RawConverter, RawRecording, Session, SessionConverter};
pub use split::{split, Condition, SessionKey, SplitConfig, Splits};
pub use synth::{generate_corpus, generate_session, mix_seed, stage_id, user_id, SyntheticConfig};
pub use window::{rotate_channels, window_count, windows, Window};

impl Session {
    pub fn key(&self) -> SessionKey {
        SessionKey { session_id: self.session_id.clone(), user_id: self.user_id.clone(), stage_id: self.stage_id.clone() }
    }
}
