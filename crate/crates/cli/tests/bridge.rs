mod support;

use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message as Ws;

use dashbell_core::model::{Access, Verdict};
use dashbell_core::protocol::{Body, Decision, ErrorCode, Hello, Message, Role, SeqState};
use support::*;

type Socket =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn open(addr: std::net::SocketAddr) -> Socket {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/"))
        .await
        .expect("websocket handshake");
    ws
}

async fn recv(ws: &mut Socket) -> Option<Message> {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(3), ws.next())
            .await
            .expect("frame within 3 s")?;
        match frame.ok()? {
            Ws::Text(t) => return Some(Message::from_text(t.as_str()).expect("valid payload")),
            Ws::Close(_) => return None,
            _ => continue,
        }
    }
}

async fn send(ws: &mut Socket, seq: &mut SeqState, body: impl Into<Body>) {
    let text = seq.stamp(body).to_text();
    ws.send(Ws::Text(text.into())).await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn bridge_carries_owner_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let server = start_server(dir.path()).await;
    let edge = start_edge(server.edge_addr).await;

    let mut ws = open(server.bridge_addr).await;
    let mut seq = SeqState::default();
    send(
        &mut ws,
        &mut seq,
        Hello {
            role: Role::Bridge,
            token: token().to_hex(),
            awaiting: vec![],
        },
    )
    .await;
    let ack = recv(&mut ws).await.unwrap();
    assert!(matches!(ack.body, Body::HelloAck(_)), "{ack:?}");

    control(edge.control_addr, &format!("press {BUTTON}"))
        .await
        .unwrap();
    let entry_id = loop {
        let m = recv(&mut ws).await.unwrap();
        if let Body::Notify(n) = m.body {
            break n.entry.entry_id;
        }
    };

    send(
        &mut ws,
        &mut seq,
        Decision {
            entry_id,
            verdict: Verdict::Granted,
        },
    )
    .await;
    loop {
        let m = recv(&mut ws).await.unwrap();
        if let Body::DecisionAck(a) = m.body {
            assert_eq!(a.entry.access_granted, Access::Yes);
            break;
        }
    }

    // A second tab deciding the same entry is told it is already decided.
    send(
        &mut ws,
        &mut seq,
        Decision {
            entry_id,
            verdict: Verdict::Denied,
        },
    )
    .await;
    loop {
        let m = recv(&mut ws).await.unwrap();
        if let Body::Error(e) = m.body {
            assert_eq!(e.code, ErrorCode::AlreadyDecided);
            break;
        }
    }

    edge.stop();
    server.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn bridge_rejects_bad_token_and_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let server = start_server(dir.path()).await;

    let mut ws = open(server.bridge_addr).await;
    let mut seq = SeqState::default();
    send(
        &mut ws,
        &mut seq,
        Hello {
            role: Role::Bridge,
            token: "0".repeat(64),
            awaiting: vec![],
        },
    )
    .await;
    let m = recv(&mut ws).await.unwrap();
    match m.body {
        Body::Error(e) => assert_eq!(e.code, ErrorCode::AuthFailure),
        other => panic!("expected auth-failure, got {other:?}"),
    }
    assert!(recv(&mut ws).await.is_none(), "connection should close");

    let mut ws = open(server.bridge_addr).await;
    ws.send(Ws::Text("{not json".into())).await.unwrap();
    let m = recv(&mut ws).await.unwrap();
    match m.body {
        Body::Error(e) => assert_eq!(e.code, ErrorCode::MalformedPayload),
        other => panic!("expected malformed-payload, got {other:?}"),
    }

    // An edge role is not allowed on the bridge.
    let mut ws = open(server.bridge_addr).await;
    let mut seq = SeqState::default();
    send(
        &mut ws,
        &mut seq,
        Hello {
            role: Role::Edge,
            token: token().to_hex(),
            awaiting: vec![],
        },
    )
    .await;
    match recv(&mut ws).await.unwrap().body {
        Body::Error(e) => assert_eq!(e.code, ErrorCode::RoleViolation),
        other => panic!("expected role-violation, got {other:?}"),
    }

    server.stop().await;
}
