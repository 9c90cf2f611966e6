"""End-to-end tour of the live stack: bring up the core, push an app through
the deploy pipeline, attach an emulated UE, and fetch a page through the
GTP-U tunnel over a real UDP socket."""

import socket
import tempfile
from pathlib import Path

from edgestack import channel, gtp
from edgestack.stack import EdgeStack, StackConfig

SID = "001010000000001"


def control(stack, message):
    return channel.request("127.0.0.1", stack.control_port, message)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        repo = Path(tmp) / "hello"
        (repo / "public").mkdir(parents=True)
        (repo / "public" / "index.html").write_text("hello from the edge\n")
        (repo / "edge.manifest").write_text(
            "test_command = exit 0\n"
            "build_recipe = static_site public\n"
            "replicas = 2\n"
            "port = 8080\n"
        )

        config = StackConfig(
            gtp_port=0, webhook_port=0, dns_port=0, control_port=0,
            workdir=str(Path(tmp) / "data"),
        )
        stack = EdgeStack(config).start()
        try:
            print(f"core up: control={stack.control_port} gtp={stack.gtp_endpoint.port}")

            print("\n== push the app ==")
            reply = control(stack, {"cmd": "push", "repo_id": "hello",
                                    "snapshot_path": str(repo)})
            for event in reply["events"]:
                print(f"  stage {event['stage']}: {event['outcome']} {event['detail']}".rstrip())
            print(f"  address: {reply['address']}")

            print("\n== attach a UE ==")
            attach = control(stack, {"cmd": "attach", "subscriber_id": SID})
            print(f"  ue_ip={attach['ue_ip']} uplink_teid={attach['uplink_teid']} "
                  f"downlink_teid={attach['downlink_teid']}")

            print("\n== request through the GTP-U tunnel ==")
            uplink = gtp.encode_gpdu(attach["uplink_teid"],
                                     b"GET hello.edge.local/index.html")
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
                sock.settimeout(10)
                sock.sendto(uplink, ("127.0.0.1", stack.gtp_endpoint.port))
                data, _ = sock.recvfrom(65536)
            downlink = gtp.decode(data)
            print(f"  downlink TEID : 0x{downlink.header.teid:08x}")
            header, _, body = downlink.payload.partition(b"\n")
            print(f"  gateway reply : {header.decode()}")
            print(f"  body          : {body.decode().strip()!r}")

            print("\n== detach ==")
            detach = control(stack, {"cmd": "detach", "subscriber_id": SID})
            print(f"  released {detach['released_ip']}")
        finally:
            stack.close()
            print("core down")


if __name__ == "__main__":
    main()
