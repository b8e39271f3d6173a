use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::protocol::{self, EpsRequest, Frame, Hello, MessageType, ReadError};
use super::{DiffusionSchedule, ScoreError, ScoreModel, ScoreRequest, ValueRange};
use crate::gradtape::Tensor;

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Blocking client for a score server. One instance owns one connection and
/// reconnects on transport failures.
pub struct RemoteScorer {
    endpoint: String,
    timeout: Duration,
    pub max_retries: usize,
    conn: Option<Connection>,
    hello: Hello,
    schedule: DiffusionSchedule,
}

impl RemoteScorer {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

    /// Connects to `host:port` and performs the hello exchange.
    pub fn connect(endpoint: &str) -> Result<Self, ScoreError> {
        Self::connect_with_timeout(endpoint, Self::DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(endpoint: &str, timeout: Duration) -> Result<Self, ScoreError> {
        let mut conn = open(endpoint, timeout)?;
        let hello = handshake(endpoint, &mut conn)?;
        let schedule = DiffusionSchedule::from_table(hello.schedule.clone())?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            timeout,
            max_retries: 2,
            conn: Some(conn),
            hello,
            schedule,
        })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    fn roundtrip(&mut self, payload: &[u8]) -> Result<Frame, ScoreError> {
        if self.conn.is_none() {
            let mut c = open(&self.endpoint, self.timeout)?;
            handshake(&self.endpoint, &mut c)?;
            self.conn = Some(c);
        }
        let conn = self.conn.as_mut().expect("connected");
        let io_err = |source| ScoreError::Connection {
            endpoint: self.endpoint.clone(),
            source,
        };
        let res = protocol::write_frame(&mut conn.writer, MessageType::EpsRequest, payload)
            .map_err(io_err)
            .and_then(|_| read(&self.endpoint, &mut conn.reader));
        if res.is_err() {
            self.conn = None;
        }
        res
    }

    fn check_limits(&self, t: &Tensor) -> Result<(), ScoreError> {
        let (h, w, _) = t.hwc()?;
        if h > self.hello.max_height as usize || w > self.hello.max_width as usize {
            return Err(ScoreError::Protocol(format!(
                "{h}x{w} exceeds server limit {}x{}",
                self.hello.max_height, self.hello.max_width
            )));
        }
        Ok(())
    }
}

fn open(endpoint: &str, timeout: Duration) -> Result<Connection, ScoreError> {
    let err = |source| ScoreError::Connection {
        endpoint: endpoint.to_string(),
        source,
    };
    let addr = endpoint
        .to_socket_addrs()
        .map_err(err)?
        .next()
        .ok_or_else(|| err(std::io::Error::new(std::io::ErrorKind::NotFound, "no address")))?;
    let stream = TcpStream::connect_timeout(&addr, timeout).map_err(err)?;
    stream.set_read_timeout(Some(timeout)).map_err(err)?;
    stream.set_nodelay(true).map_err(err)?;
    let reader = BufReader::new(stream.try_clone().map_err(err)?);
    Ok(Connection {
        reader,
        writer: BufWriter::new(stream),
    })
}

fn read(endpoint: &str, r: &mut BufReader<TcpStream>) -> Result<Frame, ScoreError> {
    match protocol::read_frame(r) {
        Ok(f) => Ok(f),
        Err(ReadError::Io(source)) => Err(ScoreError::Connection {
            endpoint: endpoint.to_string(),
            source,
        }),
        Err(ReadError::Malformed(m)) => Err(ScoreError::Protocol(m)),
    }
}

fn handshake(endpoint: &str, conn: &mut Connection) -> Result<Hello, ScoreError> {
    protocol::write_frame(&mut conn.writer, MessageType::Hello, &[]).map_err(|source| ScoreError::Connection {
        endpoint: endpoint.to_string(),
        source,
    })?;
    let f = read(endpoint, &mut conn.reader)?;
    match f.kind {
        MessageType::Hello => Hello::decode(&f.payload),
        MessageType::Error => Err(ScoreError::Server(protocol::decode_error(&f.payload))),
        k => Err(ScoreError::Protocol(format!("expected hello, got {k:?}"))),
    }
}

impl ScoreModel for RemoteScorer {
    fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn value_range(&self) -> ValueRange {
        ValueRange::Signed
    }

    /// Sends the integer step for `req.t`; guidance is applied by the server.
    /// A trailing variance block in the response (twice the channels) is
    /// dropped.
    fn eps(&mut self, req: &ScoreRequest<'_>) -> Result<Tensor, ScoreError> {
        self.check_limits(req.x_t)?;
        if !req.guidance.is_finite() {
            return Err(ScoreError::Protocol(format!("guidance scale {}", req.guidance)));
        }
        let step = self.schedule.step(req.t)?.expect("tabulated schedule");
        let payload = EpsRequest {
            x_t: req.x_t.clone(),
            t_or_step: step as f32,
            prompt: req.prompt.to_string(),
            cond: req.cond.cloned(),
            guidance: req.guidance,
            seed: req.seed,
        }
        .encode();
        let mut attempt = 0;
        let frame = loop {
            match self.roundtrip(&payload) {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    log::warn!("retrying score request ({attempt}/{}): {e}", self.max_retries);
                }
                other => break other?,
            }
        };
        match frame.kind {
            MessageType::EpsResponse => {}
            MessageType::Error => return Err(ScoreError::Server(protocol::decode_error(&frame.payload))),
            k => return Err(ScoreError::Protocol(format!("expected eps response, got {k:?}"))),
        }
        let mut r = protocol::Reader::new(&frame.payload);
        let eps = r.tensor()?;
        r.finish()?;
        let want = req.x_t.shape();
        if eps.shape() == want {
            return Ok(eps);
        }
        match (eps.shape(), want) {
            ([h, w, c2], [hh, ww, c]) if h == hh && w == ww && *c2 == 2 * c => {
                let data = eps
                    .data()
                    .chunks_exact(*c2)
                    .flat_map(|px| px[..*c].iter().copied())
                    .collect();
                Ok(Tensor::new(want.to_vec(), data)?)
            }
            _ => Err(ScoreError::Protocol(format!(
                "response shape {:?} does not match request {want:?}",
                eps.shape()
            ))),
        }
    }
}
