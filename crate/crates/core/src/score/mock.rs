//! In-process test double for the score server.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::protocol::{self, EpsRequest, Hello, MessageType, ReadError};
use super::{degenerate_eps, DiffusionSchedule, ScoreError};
use crate::gradtape::Tensor;

#[derive(Clone, Debug)]
pub enum MockMode {
    Zeros,
    /// Closed-form denoiser around a fixed target.
    Degenerate(Tensor),
}

/// `len`-step table sampled from the cosine schedule.
pub fn cosine_table(len: usize) -> Vec<f32> {
    let s = DiffusionSchedule::Cosine;
    (0..len)
        .map(|i| s.alpha_bar(i as f32 / (len - 1).max(1) as f32).expect("t in range"))
        .collect()
}

/// Listens on an ephemeral localhost port; each connection gets a thread.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn spawn(mode: MockMode) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let hello = Hello {
            model: "mock".into(),
            schedule: cosine_table(1000),
            max_height: 256,
            max_width: 256,
        };
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (mode, hello) = (mode.clone(), hello.clone());
                std::thread::spawn(move || serve(stream, &mode, &hello));
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn answer(req: &EpsRequest, mode: &MockMode, hello: &Hello) -> Result<Tensor, ScoreError> {
    match mode {
        MockMode::Zeros => Ok(Tensor::zeros(req.x_t.shape().to_vec())),
        MockMode::Degenerate(target) => {
            let step = req.t_or_step;
            if !(step >= 0.0 && step.fract() == 0.0 && (step as usize) < hello.schedule.len()) {
                return Err(ScoreError::Server(format!("invalid step {step}")));
            }
            degenerate_eps(&req.x_t, hello.schedule[step as usize], target)
        }
    }
}

fn serve(stream: TcpStream, mode: &MockMode, hello: &Hello) {
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = match protocol::read_frame(&mut reader) {
            Ok(f) => f,
            Err(ReadError::Io(_)) => return,
            Err(ReadError::Malformed(m)) => {
                let _ = protocol::write_frame(&mut writer, MessageType::Error, &protocol::encode_error(&m));
                return;
            }
        };
        let reply = match frame.kind {
            MessageType::Hello => Ok((MessageType::Hello, hello.encode())),
            MessageType::EpsRequest => EpsRequest::decode(&frame.payload)
                .and_then(|req| answer(&req, mode, hello))
                .map(|eps| {
                    let mut out = Vec::new();
                    protocol::put_tensor(&mut out, &eps);
                    (MessageType::EpsResponse, out)
                }),
            k => Err(ScoreError::Protocol(format!("unexpected {k:?} frame"))),
        };
        match reply {
            Ok((kind, payload)) => {
                if protocol::write_frame(&mut writer, kind, &payload).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = protocol::write_frame(&mut writer, MessageType::Error, &protocol::encode_error(&e.to_string()));
                if matches!(e, ScoreError::Protocol(_)) {
                    return;
                }
            }
        }
    }
}
