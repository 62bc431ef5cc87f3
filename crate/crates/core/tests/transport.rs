use std::io::Read;
use std::net::{SocketAddr, TcpListener};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ddpsa::field::PrimeModulus;
use ddpsa::protocol::RoundMessage;
use ddpsa::sharing::ShareVector;
use ddpsa::transport::{encode_frame, Link, Role, SimTransport, TcpTransport, Transport};
use ddpsa::Error;

fn share(round: u64, client: u32, server: u16, rng: &mut ChaCha20Rng) -> RoundMessage {
    let modulus = PrimeModulus::default();
    RoundMessage::ShareUpload(ShareVector {
        round_id: round,
        client_id: client,
        server_index: server,
        elements: (0..3)
            .map(|_| modulus.element(rng.random_range(0..modulus.value())))
            .collect(),
    })
}

fn sample_messages() -> Vec<(Role, Role, RoundMessage)> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let modulus = PrimeModulus::default();
    vec![
        (
            Role::ParameterServer,
            Role::Client(0),
            RoundMessage::ModelBroadcast {
                round_id: 7,
                theta: vec![1.5, -0.25, 3.0],
            },
        ),
        (Role::Client(0), Role::Intermediate(1), share(7, 0, 1, &mut rng)),
        (
            Role::Intermediate(1),
            Role::ParameterServer,
            RoundMessage::PartialSum {
                round_id: 7,
                server_index: 1,
                elements: vec![modulus.element(42), modulus.element(modulus.value() - 1), modulus.zero()],
            },
        ),
        (
            Role::Client(0),
            Role::ParameterServer,
            RoundMessage::PlainGradientUpload {
                round_id: 7,
                client_id: 0,
                values: vec![f64::MIN_POSITIVE, -0.0, 1e300],
            },
        ),
        (Role::ParameterServer, Role::Intermediate(1), RoundMessage::RoundAck { round_id: 7 }),
    ]
}

#[test]
fn tcp_loopback_delivers_ten_thousand_messages_in_order() {
    let modulus = PrimeModulus::default();
    let t = TcpTransport::loopback(&[Role::Client(3), Role::Intermediate(0)], modulus)
        .unwrap()
        .with_timeout(Duration::from_secs(20));
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let sent: Vec<RoundMessage> = (0..10_000).map(|r| share(r, 3, 0, &mut rng)).collect();
    std::thread::scope(|s| {
        s.spawn(|| {
            for m in &sent {
                t.send(Role::Client(3), Role::Intermediate(0), m).unwrap();
            }
        });
        for expected in &sent {
            let env = t.receive(Role::Intermediate(0), None).unwrap();
            assert_eq!(env.from, Role::Client(3));
            assert_eq!(&env.msg, expected);
        }
    });
}

#[test]
fn sim_and_tcp_put_identical_bytes_on_the_wire() {
    let modulus = PrimeModulus::default();
    for (from, to, msg) in sample_messages() {
        let sim = SimTransport::new(modulus);
        sim.register(from);
        sim.register(to);
        sim.send(from, to, &msg).unwrap();
        let sim_bytes = sim.peek_frame(to).unwrap();

        // a bare socket stands in for the receiving role
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let local: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let tcp = TcpTransport::bind(&[(from, local)], &[(to, listener.local_addr().unwrap())], modulus).unwrap();
        tcp.send(from, to, &msg).unwrap();
        let (mut stream, _) = listener.accept().unwrap();
        let mut wire = vec![0u8; sim_bytes.len()];
        stream.read_exact(&mut wire).unwrap();

        assert_eq!(wire, sim_bytes, "{:?}", msg.message_type());
        assert_eq!(wire, encode_frame(&msg).unwrap());
    }
}

#[test]
fn both_transports_refuse_forbidden_links_and_spoofing() {
    let modulus = PrimeModulus::default();
    let sim = SimTransport::new(modulus);
    let tcp = TcpTransport::loopback(&[Role::Client(0), Role::Client(1), Role::ParameterServer], modulus).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let upload = share(0, 0, 0, &mut rng);
    let transports: [&dyn Transport; 2] = [&sim, &tcp];
    for t in transports {
        // individual shares never go to the parameter server
        assert!(matches!(
            t.send(Role::Client(0), Role::ParameterServer, &upload),
            Err(Error::Protocol(_))
        ));
        // client 1 cannot upload in client 0's name
        let spoof = RoundMessage::PlainGradientUpload {
            round_id: 0,
            client_id: 0,
            values: vec![0.0; 3],
        };
        assert!(matches!(
            t.send(Role::Client(1), Role::ParameterServer, &spoof),
            Err(Error::Protocol(_))
        ));
    }
}

#[test]
fn tcp_receive_times_out_and_tap_is_unsupported() {
    let modulus = PrimeModulus::default();
    let tcp = TcpTransport::loopback(&[Role::ParameterServer], modulus).unwrap();
    let err = tcp
        .receive(Role::ParameterServer, Some(Duration::from_millis(50)))
        .unwrap_err();
    assert!(matches!(err, Error::Timeout));
    assert!(matches!(
        tcp.eavesdrop_tap(Link::new(Role::Client(0), Role::ParameterServer)),
        Err(Error::Unsupported(_))
    ));
}
