"""Client and server state machines for lattice-hidden generation.

Both parties build the same lattice in lockstep.  Per round t the server
computes next-token distributions for every G-gram tail of the shared
lattice and sends them down; the client samples the true token from its own
tail's distribution, manufactures N-1 noise tokens, shuffles the column with
a permutation seeded by ``prime * t``, and sends the column up.  Only the
client ever holds the prime or the true positions.

The wire is newline-delimited JSON (:mod:`latticegen.wire`).  Transports
must deliver those frames reliably and in order; an in-process transport and
a TCP transport are provided and produce identical bytes.
"""

from __future__ import annotations

import socket
import socketserver
import threading
from dataclasses import dataclass, field

from .lattice import ClientSecret, Lattice, enumerate_tails, linearize, permute_column
from .lm import LmBackend, SamplerConfig, Tail, TokenId, dists_by_tail, sample
from .noise import MixingConfig, NoiseContext, NoiseScheme, make_scheme
from .rng import Rng
from .transcript import TranscriptConfig, TranscriptRecord
from .vocab import Vocabulary
from .wire import Dists, Done, Error, Hello, Tokens, WireMessage, decode_message, encode_message


class ProtocolError(RuntimeError):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class SchemeSpec:
    """Noise scheme selection plus its hyper-parameters."""

    name: str = "parallel"
    noise_k: int = 5
    mix_ratio: float = 0.1
    prompt_mix_ratio: float | None = 0.2
    synonym_skip: int = 10
    synonym_take: int = 5

    def build(self, emb=None) -> NoiseScheme:
        return make_scheme(
            self.name,
            emb=emb,
            mixing=MixingConfig(
                mix_ratio=self.mix_ratio,
                prompt_mix_ratio=self.prompt_mix_ratio,
                noise_k=self.noise_k,
            ),
            noise_k=self.noise_k,
            synonym_skip=self.synonym_skip,
            synonym_take=self.synonym_take,
        )


@dataclass(frozen=True)
class VocabInfo:
    """The little the protocol needs to know about a vocabulary."""

    size: int
    bos_id: int = 0
    eot_id: int | None = None
    content_hash: str = ""

    @classmethod
    def of(cls, vocab: Vocabulary) -> "VocabInfo":
        return cls(
            size=len(vocab),
            bos_id=vocab.bos_id,
            eot_id=vocab.eot_id,
            content_hash=vocab.content_hash(),
        )


@dataclass(frozen=True)
class SessionConfig:
    """Everything one generation session needs, client side.

    ``prime`` is the client's private seed material; it never leaves the
    client.  Width 1 is allowed as a degenerate mode for benchmarking, but
    hiding anything requires n >= 2.
    """

    n: int = 2
    g: int = 1
    t_max: int = 60
    k: int = 50
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    prompt: tuple[TokenId, ...] = ()
    prime: int = 2_147_483_647

    def __post_init__(self):
        if self.n < 1:
            raise ProtocolError("config", "lattice width must be >= 1")
        if self.g < 1:
            raise ProtocolError("config", "tail length must be >= 1")
        if self.t_max < 1:
            raise ProtocolError("config", "t_max must be >= 1")
        if self.k < 1:
            raise ProtocolError("config", "wire top-k must be >= 1")


@dataclass
class ClientOutcome:
    true_seq: tuple[TokenId, ...]
    lattice: Lattice
    secret: ClientSecret


class ServerSession:
    """One conversation's server endpoint: reactive, aborts on any misstep."""

    def __init__(
        self,
        backend: LmBackend,
        vocab: VocabInfo,
        store_full: bool = False,
        max_k: int = 512,
    ):
        self.backend = backend
        self.vocab = vocab
        self.store_full = store_full
        self.max_k = max_k
        self.lattice: Lattice | None = None
        self.saved_dists: list[tuple] = []
        self.hello: Hello | None = None
        self._next_t = 0
        self._aborted = False
        self._done = False

    def handle(self, msg: WireMessage) -> WireMessage:
        if self._aborted:
            return Error("aborted", "session already aborted")
        try:
            return self._dispatch(msg)
        except ProtocolError as exc:
            self._aborted = True
            return Error(exc.code, exc.detail)

    def _dispatch(self, msg: WireMessage) -> WireMessage:
        if self.hello is None:
            if not isinstance(msg, Hello):
                raise ProtocolError("expected_hello", f"got {type(msg).__name__}")
            if msg.n < 1 or msg.g < 1 or msg.k < 1 or msg.t_max < 1:
                raise ProtocolError("bad_hello", "n, g, k, t_max must be positive")
            if msg.k > self.max_k:
                raise ProtocolError("k_too_large", f"server caps top-k at {self.max_k}")
            if self.vocab.content_hash and msg.vocab_hash != self.vocab.content_hash:
                raise ProtocolError("vocab_mismatch", "client vocabulary differs")
            self.hello = msg
            self.lattice = Lattice(msg.n)
            return msg
        if isinstance(msg, Done):
            raise ProtocolError("unexpected_done", "client may not end the session early")
        if not isinstance(msg, Tokens):
            raise ProtocolError("expected_tokens", f"got {type(msg).__name__}")
        if msg.t != self._next_t:
            raise ProtocolError(
                "out_of_order", f"expected t={self._next_t}, got t={msg.t}"
            )
        hello = self.hello
        if msg.t == 0:
            if tuple(msg.ids) != (self.vocab.bos_id,) * hello.n:
                raise ProtocolError("bad_start", "step 0 must be N bos tokens")
        else:
            if len(msg.ids) != hello.n:
                raise ProtocolError("bad_column", f"need exactly {hello.n} ids")
            if len(set(msg.ids)) != len(msg.ids):
                raise ProtocolError("duplicate_ids", "column tokens must be distinct")
            for w in msg.ids:
                if not 0 <= w < self.vocab.size:
                    raise ProtocolError("unknown_token", f"id {w} outside vocabulary")
            self.lattice = self.lattice.append(msg.ids)
        self._next_t = msg.t + 1
        if msg.t == hello.t_max:
            self._done = True
            return Done(msg.t)
        return self._compute_dists(msg.t + 1)

    def _compute_dists(self, t: int) -> Dists:
        hello = self.hello
        context = linearize(self.lattice, self.vocab.bos_id)
        tails = enumerate_tails(self.lattice, hello.g, self.vocab.bos_id)
        full_mode = self.store_full
        # Tails repeat while the lattice is shorter than G; infer each
        # distinct tail once, but keep the full N^G payload shape.
        cache: dict[Tail, object] = {}
        saved = []
        wired = []
        for tail in tails:
            dist = cache.get(tail)
            if dist is None:
                dist = self.backend.next_dist(
                    context, tail, k=None if full_mode else hello.k
                )
                cache[tail] = dist
            saved.append(dist)
            wired.append(dist.truncate(hello.k))
        self.saved_dists.append(tuple(saved))
        return Dists(t, tuple(wired))

    @property
    def complete(self) -> bool:
        return self._done

    def transcript(self) -> TranscriptRecord:
        if not self._done:
            raise ProtocolError("incomplete", "transcript of an unfinished session")
        hello = self.hello
        return TranscriptRecord(
            config=TranscriptConfig(
                n=hello.n,
                g=hello.g,
                k=hello.k,
                bos_id=self.vocab.bos_id,
                vocab_hash=hello.vocab_hash,
                full_vector=self.store_full,
            ),
            lattice=self.lattice,
            saved_dists=tuple(self.saved_dists),
        )


class ClientSession:
    """Holds the only copy of the secret; drives sampling and noise."""

    def __init__(
        self,
        config: SessionConfig,
        vocab: VocabInfo,
        rng: Rng,
        emb=None,
    ):
        if config.prime <= vocab.size:
            raise ProtocolError("config", "seed prime must exceed the vocabulary size")
        self.config = config
        self.vocab = vocab
        self.scheme = config.scheme.build(emb=emb)
        self.emb = emb
        # Independent substreams: consuming noise randomness must not
        # perturb the true sequence (and vice versa).
        self.true_rng = rng.spawn("true")
        self.noise_rng = rng.spawn("noise")
        self.secret = ClientSecret(prime=config.prime)
        self.lattice = Lattice(config.n)
        self.true_seq: list[TokenId] = []
        self.noise_tails: list[Tail] = [
            (vocab.bos_id,) * config.g for _ in range(config.n - 1)
        ]

    def hello(self) -> Hello:
        return Hello(
            n=self.config.n,
            g=self.config.g,
            k=self.config.k,
            t_max=self.config.t_max,
            vocab_hash=self.vocab.content_hash,
        )

    def start_tokens(self) -> Tokens:
        return Tokens(0, (self.vocab.bos_id,) * self.config.n)

    def _true_tail(self) -> Tail:
        g = self.config.g
        padded = [self.vocab.bos_id] * g + self.true_seq
        return tuple(padded[len(padded) - g :])

    def step(self, msg: Dists) -> Tokens:
        """Consume one Dists message, emit the next column."""
        cfg = self.config
        t = len(self.true_seq) + 1
        if msg.t != t:
            raise ProtocolError("out_of_order", f"expected dists for t={t}, got {msg.t}")
        if len(msg.items) != cfg.n**cfg.g:
            raise ProtocolError("bad_dists", f"expected {cfg.n**cfg.g} distributions")
        dmap = dists_by_tail(msg.items)
        true_tail = self._true_tail()
        if true_tail not in dmap:
            raise ProtocolError("missing_tail", "no distribution for the true tail")

        is_prompt = t <= len(cfg.prompt)
        eot = self.vocab.eot_id
        if is_prompt:
            w_true = cfg.prompt[t - 1]
        elif eot is not None and self.true_seq and self.true_seq[-1] == eot:
            # Early end of text: keep emitting full columns so length leaks
            # nothing; the padding token consumes no randomness.
            w_true = eot
        else:
            w_true = sample(dmap[true_tail], cfg.sampler, self.true_seq, self.true_rng)

        noise = self.scheme.make_noise(
            NoiseContext(
                true_token=w_true,
                true_tail=true_tail,
                noise_tails=tuple(self.noise_tails),
                dists=dmap,
                rng=self.noise_rng,
                vocab_size=self.vocab.size,
                is_prompt=is_prompt,
                emb=self.emb,
            )
        )
        if len(noise) != cfg.n - 1:
            raise ProtocolError("bad_noise", "scheme returned wrong count")

        column = [w_true, *noise]
        permuted, index_map = permute_column(column, self.secret.prime, t)
        self.secret.true_indices.append(index_map[0])
        self.lattice = self.lattice.append(permuted)
        self.true_seq.append(w_true)
        g = self.config.g
        self.noise_tails = [
            (old + (tok,))[-g:] for old, tok in zip(self.noise_tails, noise)
        ]
        return Tokens(t, tuple(permuted))

    def finish(self, msg: Done) -> ClientOutcome:
        if msg.t != self.config.t_max or len(self.true_seq) != self.config.t_max:
            raise ProtocolError("bad_done", "done before all steps completed")
        return ClientOutcome(tuple(self.true_seq), self.lattice, self.secret)


class Transport:
    """A reliable, ordered request/response byte channel."""

    def request(self, msg: WireMessage) -> WireMessage:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def fetch_transcript(self) -> TranscriptRecord | None:
        return None


class InProcessTransport(Transport):
    """Loops through the codec so bytes match the socket transport exactly."""

    def __init__(self, server: ServerSession):
        self.server = server
        self.sent_frames: list[bytes] = []
        self.received_frames: list[bytes] = []

    def request(self, msg: WireMessage) -> WireMessage:
        out = encode_message(msg)
        self.sent_frames.append(out)
        resp = self.server.handle(decode_message(out))
        back = encode_message(resp)
        self.received_frames.append(back)
        return decode_message(back)

    def fetch_transcript(self) -> TranscriptRecord | None:
        return self.server.transcript() if self.server.complete else None


class SocketTransport(Transport):
    def __init__(self, host: str, port: int, server: "LatticeServer | None" = None):
        self._sock = socket.create_connection((host, port))
        self._file = self._sock.makefile("rb")
        self._server = server
        self.sent_frames: list[bytes] = []
        self.received_frames: list[bytes] = []

    def request(self, msg: WireMessage) -> WireMessage:
        out = encode_message(msg)
        self.sent_frames.append(out)
        try:
            self._sock.sendall(out)
            line = self._file.readline()
        except OSError as exc:
            raise ProtocolError("transport", f"connection failed mid-session: {exc}") from None
        if not line:
            raise ProtocolError("transport", "connection closed mid-session")
        self.received_frames.append(line)
        return decode_message(line)

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def fetch_transcript(self) -> TranscriptRecord | None:
        if self._server is not None and self._server.transcripts:
            return self._server.transcripts[-1]
        return None


def run_session(
    config: SessionConfig,
    client_rng: Rng,
    transport: Transport,
    vocab: VocabInfo,
    emb=None,
) -> tuple[TranscriptRecord | None, ClientOutcome]:
    """Drive a full conversation over ``transport``.

    Returns the transcript when the transport can expose the server's record
    (in-process, or a test-owned socket server) and the client's outcome.
    """
    client = ClientSession(config, vocab, client_rng, emb=emb)
    resp = transport.request(client.hello())
    _expect(resp, Hello)
    resp = transport.request(client.start_tokens())
    for _ in range(config.t_max):
        _expect(resp, Dists)
        resp = transport.request(client.step(resp))
    done = _expect(resp, Done)
    outcome = client.finish(done)
    return transport.fetch_transcript(), outcome


def _expect(msg: WireMessage, kind: type) -> WireMessage:
    if isinstance(msg, Error):
        raise ProtocolError(msg.code, msg.detail)
    if not isinstance(msg, kind):
        raise ProtocolError("unexpected", f"wanted {kind.__name__}, got {type(msg).__name__}")
    return msg


def run_in_process(
    config: SessionConfig,
    backend: LmBackend,
    vocab: VocabInfo,
    client_seed: int,
    emb=None,
    store_full: bool = False,
) -> tuple[TranscriptRecord, ClientOutcome, InProcessTransport]:
    """Convenience wrapper used by the harness and the tests."""
    server = ServerSession(backend, vocab, store_full=store_full)
    transport = InProcessTransport(server)
    transcript, outcome = run_session(config, Rng(client_seed), transport, vocab, emb=emb)
    return transcript, outcome, transport


class _SessionHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: LatticeServer = self.server  # type: ignore[assignment]
        session = ServerSession(
            server.backend, server.vocab,
            store_full=server.store_full, max_k=server.max_k,
        )
        while True:
            line = self.rfile.readline()
            if not line:
                return
            try:
                msg = decode_message(line)
            except Exception as exc:
                self.wfile.write(encode_message(Error("malformed", str(exc))))
                return
            resp = session.handle(msg)
            self.wfile.write(encode_message(resp))
            self.wfile.flush()
            if isinstance(resp, Error):
                return
            if isinstance(resp, Done):
                with server.lock:
                    server.transcripts.append(session.transcript())
                return


class LatticeServer(socketserver.ThreadingTCPServer):
    """TCP server: one session per connection, shared immutable backend."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        backend: LmBackend,
        vocab: VocabInfo,
        store_full: bool = False,
        max_k: int = 512,
    ):
        super().__init__(address, _SessionHandler)
        self.backend = backend
        self.vocab = vocab
        self.store_full = store_full
        self.max_k = max_k
        self.transcripts: list[TranscriptRecord] = []
        self.lock = threading.Lock()

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def plain_session_reference(
    config: SessionConfig,
    backend,
    vocab: VocabInfo,
    client_seed: int,
) -> list[TokenId]:
    """No-lattice generation consuming the same true-token rng stream.

    What the protocol degrades to with the tail-only backend: same sampler,
    same wire truncation, no lattice anywhere.
    """
    from .lm import plain_generate

    rng = Rng(client_seed).spawn("true")
    return plain_generate(
        backend,
        config.prompt,
        config.t_max,
        config.sampler,
        rng,
        wire_k=config.k,
        eot_id=vocab.eot_id,
    )
