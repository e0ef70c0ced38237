//! A whole cluster in one process, over loopback or TCP.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::client::{ClientError, Session};
use crate::config::{ClusterConfig, ConfigError};
use crate::server::{self, ServerError, ServerHandle};
use crate::transport::{LoopbackNet, Network, NodeId, Stats, TcpNet};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

pub struct Cluster {
    pub cfg: Arc<ClusterConfig>,
    pub net: Arc<dyn Network>,
    servers: Vec<ServerHandle>,
}

impl Cluster {
    /// Starts every configured server on a loopback network.
    pub fn loopback(cfg: ClusterConfig) -> Result<Cluster, ClusterError> {
        let net: Arc<dyn Network> = LoopbackNet::new();
        Cluster::start(cfg, net, None)
    }

    /// Starts every configured server listening on its TCP address.
    pub fn tcp(cfg: ClusterConfig) -> Result<Cluster, ClusterError> {
        let net: Arc<dyn Network> = TcpNet::new(cfg.socket_addrs()?);
        Cluster::start(cfg, net, None)
    }

    /// Starts the servers in `only` (all when `None`) on `net`.
    pub fn start(
        cfg: ClusterConfig,
        net: Arc<dyn Network>,
        only: Option<&[NodeId]>,
    ) -> Result<Cluster, ClusterError> {
        cfg.validate()?;
        let cfg = Arc::new(cfg);
        let mut servers = Vec::new();
        for id in cfg.server_ids() {
            if only.is_none_or(|o| o.contains(&id)) {
                servers.push(server::spawn(cfg.clone(), id, net.as_ref())?);
            }
        }
        Ok(Cluster { cfg, net, servers })
    }

    /// A connected client session.
    pub fn session(&self) -> Result<Session, ClientError> {
        Session::open_session(self.net.clone(), self.cfg.clone())
    }

    pub fn stats(&self) -> Arc<Stats> {
        self.net.stats()
    }

    /// Blocks until every local server has exited.
    pub fn wait(mut self) {
        for s in self.servers.drain(..) {
            s.join();
        }
    }

    /// Drains and stops the servers through the controller.
    pub fn shutdown(mut self) -> Result<(), ClusterError> {
        let r = self.stop();
        self.servers.drain(..).for_each(ServerHandle::join);
        r
    }

    fn stop(&mut self) -> Result<(), ClusterError> {
        if self.servers.iter().all(ServerHandle::is_finished) {
            return Ok(());
        }
        let mut s = self.session()?;
        s.shutdown_servers()?;
        let deadline = Instant::now() + Duration::from_secs(10);
        while !self.servers.iter().all(ServerHandle::is_finished) && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
        Ok(())
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        if !self.servers.is_empty() {
            let _ = self.stop();
            self.servers.drain(..).for_each(ServerHandle::join);
        }
    }
}
