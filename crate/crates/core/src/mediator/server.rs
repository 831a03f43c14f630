use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;

use super::protocol::{parse_request, salvage_seq};
use super::{Mediator, Request, Response};

type Job = (Request, mpsc::Sender<Response>);

/// Socket front-end for a [`Mediator`].
///
/// Each connection gets a reader thread; all parsed requests funnel through
/// one channel into the thread that owns the mediator, so the mediator sees a
/// single total order. A connection waits for each response before reading
/// its next line.
pub struct MediatorServer {
    listener: TcpListener,
    mediator: Mediator,
}

impl MediatorServer {
    pub fn bind(addr: impl ToSocketAddrs, mediator: Mediator) -> io::Result<Self> {
        Ok(MediatorServer {
            listener: TcpListener::bind(addr)?,
            mediator,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves forever.
    pub fn run(self) -> io::Result<()> {
        let (jobs, queue) = mpsc::channel::<Job>();
        let mut mediator = self.mediator;
        thread::spawn(move || {
            for (request, reply_to) in queue {
                let _ = reply_to.send(mediator.handle(request));
            }
        });
        for stream in self.listener.incoming() {
            let stream = stream?;
            let jobs = jobs.clone();
            thread::spawn(move || {
                if let Err(e) = serve_connection(stream, jobs) {
                    eprintln!("mediator connection closed: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the server on a background thread and returns its address.
    pub fn spawn(self) -> io::Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::spawn(move || self.run());
        Ok(addr)
    }
}

fn serve_connection(stream: TcpStream, jobs: mpsc::Sender<Job>) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match parse_request(&line) {
            Ok(request) => {
                let (tx, rx) = mpsc::channel();
                jobs.send((request, tx))
                    .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "mediator stopped"))?;
                rx.recv()
                    .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "mediator stopped"))?
            }
            Err(e) => Response::malformed(salvage_seq(&line), &e),
        };
        let mut out = response.to_line();
        out.push('\n');
        writer.write_all(out.as_bytes())?;
    }
    Ok(())
}

/// Blocking line-oriented client.
pub struct MediatorClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl MediatorClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(MediatorClient {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    /// Sends one raw line and returns the raw response line, without the
    /// trailing newline.
    pub fn send_line(&mut self, line: &str) -> io::Result<String> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        let mut response = String::new();
        if self.reader.read_line(&mut response)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed"));
        }
        while response.ends_with('\n') || response.ends_with('\r') {
            response.pop();
        }
        Ok(response)
    }

    pub fn call(&mut self, request: &Request) -> io::Result<Response> {
        let line = self.send_line(&request.to_line())?;
        Response::parse(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mediator::{Reply, RequestBody};
    use crate::NetworkId;

    #[test]
    fn round_trip_over_loopback() {
        let addr = MediatorServer::bind("127.0.0.1:0", Mediator::new(3))
            .unwrap()
            .spawn()
            .unwrap();
        let mut client = MediatorClient::connect(addr).unwrap();
        let a = NetworkId::from("a");
        let r = client
            .call(&Request {
                seq: 1,
                network: a.clone(),
                body: RequestBody::Register,
            })
            .unwrap();
        assert_eq!(r, Response { seq: 1, reply: Reply::Ack });
        let r = client
            .call(&Request {
                seq: 2,
                network: a,
                body: RequestBody::GetBeta,
            })
            .unwrap();
        assert_eq!(r.reply, Reply::Beta(0.0));
        let raw = client.send_line("{\"seq\":5,\"op\":\"warp\",\"network\":\"a\"}").unwrap();
        assert_eq!(raw, r#"{"seq":5,"ok":false,"error":"unknown op `warp`"}"#);
    }
}
