#include <doctest.h>

#include <atomic>
#include <cstring>
#include <set>
#include <thread>

#include "support.hpp"
#include "texweave/denoiser.hpp"
#include "texweave/error.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines _res as a macro.
#include <httplib.h>
#include <json.hpp>

using namespace texweave;
using namespace texweave::testing;
using nlohmann::json;

namespace {

std::vector<unsigned char> bytes(std::string_view s) { return {s.begin(), s.end()}; }

DenoiseRequest sample_request(int channels = 4, int size = 8) {
    DenoiseRequest r;
    r.session_id = "s1";
    r.timestep = 749;
    r.window_row = 16;
    r.window_col = 32;
    r.latent = Image<float>(channels, size, size);
    for (int c = 0; c < channels; ++c)
        for (Eigen::Index i = 0; i < r.latent.plane(c).size(); ++i) r.latent.at(c, i) = 0.01f * (c * 100 + i) - 1.3f;
    r.depth = Plane<float>::Constant(size, size, 0.25f);
    r.prompt_handle = "h0";
    return r;
}

// In-process stand-in for the sidecar, listening on an ephemeral port.
class StubServer {
public:
    StubServer() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Server& server() { return server_; }
    std::string url(const std::string& prefix = "") const { return "http://127.0.0.1:" + std::to_string(port_) + prefix; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

// A loopback port that was free a moment ago and is closed again.
int unused_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

} // namespace

TEST_CASE("base64 follows RFC 4648") {
    const std::pair<const char*, const char*> vectors[] = {{"", ""},          {"f", "Zg=="},         {"fo", "Zm8="},
                                                           {"foo", "Zm9v"},   {"foob", "Zm9vYg=="},  {"fooba", "Zm9vYmE="},
                                                           {"foobar", "Zm9vYmFy"}};
    for (auto [plain, coded] : vectors) {
        CHECK(base64_encode(bytes(plain)) == coded);
        CHECK(base64_decode(coded) == bytes(plain));
    }
    CHECK_THROWS_AS(base64_decode("Zm9v!"), Error);
    CHECK_THROWS_AS(base64_decode("Zg=a"), Error);
}

TEST_CASE("float blobs are little-endian and bit exact") {
    const float one = 1.0f;
    CHECK(encode_floats(std::span(&one, 1)) == base64_encode(std::vector<unsigned char>{0x00, 0x00, 0x80, 0x3f}));

    std::vector<float> values{0.0f, -0.0f, 1e-38f, 3.4e38f, -7.25f, std::numeric_limits<float>::denorm_min(),
                              std::numeric_limits<float>::infinity()};
    const auto back = decode_floats(encode_floats(values));
    REQUIRE(back.size() == values.size());
    CHECK(std::memcmp(back.data(), values.data(), values.size() * sizeof(float)) == 0);
    CHECK_THROWS_AS(decode_floats(base64_encode(bytes("abcde"))), ShapeMismatch);
}

TEST_CASE("image blobs are (C, H, W) row-major") {
    Image<float> img(2, 2, 3);
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < 2; ++r)
            for (int q = 0; q < 3; ++q) img(c, r, q) = static_cast<float>(c * 100 + r * 10 + q);
    const auto flat = decode_floats(encode_image(img));
    REQUIRE(flat.size() == 12);
    CHECK(flat[0] == 0.0f);
    CHECK(flat[1] == 1.0f);
    CHECK(flat[3] == 10.0f);
    CHECK(flat[6] == 100.0f);
    CHECK(decode_image(encode_image(img), 2, 2, 3) == img);
    CHECK_THROWS_AS(decode_image(encode_image(img), 2, 3, 3), ShapeMismatch);
}

TEST_CASE("request and response codecs round trip") {
    const auto req = sample_request();
    const json j = json::parse(encode_denoise_request(req));
    CHECK(j.at("session_id") == "s1");
    CHECK(j.at("timestep") == 749);
    CHECK(j.at("shape") == json::array({4, 8, 8}));
    CHECK(j.at("prompt_handle") == "h0");
    CHECK(j.contains("latent_b64"));
    CHECK(j.contains("depth_b64"));

    const auto back = decode_denoise_request(encode_denoise_request(req));
    CHECK(back.session_id == req.session_id);
    CHECK(back.timestep == req.timestep);
    CHECK(back.latent == req.latent);
    CHECK(back.depth == req.depth);
    CHECK(back.prompt_handle == req.prompt_handle);

    DenoiseResponse ok{true, req.latent, ""};
    const auto ok_back = decode_denoise_response(encode_denoise_response(ok), 4, 8);
    CHECK(ok_back.ok);
    CHECK(ok_back.latent == req.latent);
    CHECK_THROWS_AS(decode_denoise_response(encode_denoise_response(ok), 4, 16), ShapeMismatch);

    const auto err = decode_denoise_response(R"({"status":"error","message":"CUDA out of memory"})", 4, 8);
    CHECK_FALSE(err.ok);
    CHECK(err.message == "CUDA out of memory");
    CHECK_THROWS_AS(decode_denoise_response("not json", 4, 8), BackendError);
    CHECK_THROWS_AS(decode_denoise_request(R"({"session_id":"x"})"), Error);
}

TEST_CASE("mock kinds") {
    CHECK(MockKind::parse("identity").type == MockKind::Type::Identity);
    CHECK(MockKind::parse("constant:0.7").parameter == doctest::Approx(0.7));
    CHECK(MockKind::parse("shrink:0.5").type == MockKind::Type::Shrink);
    CHECK(MockKind::parse("box_blur:3").parameter == 3.0);
    CHECK(MockKind::parse("box_blur:5").to_string() == "box_blur:5");
    CHECK_THROWS_AS(MockKind::parse("box_blur:4"), ConfigError);
    CHECK_THROWS_AS(MockKind::parse("box_blur:2.5"), ConfigError);
    CHECK_THROWS_AS(MockKind::parse("constant"), ConfigError);
    CHECK_THROWS_AS(MockKind::parse("sharpen:1"), ConfigError);

    const auto req = sample_request(2, 5);
    CHECK(mock_denoise(MockKind::parse("identity"), req).latent == req.latent);
    const auto shrunk = mock_denoise(MockKind::parse("shrink:0.5"), req).latent;
    CHECK(shrunk(1, 2, 3) == doctest::Approx(0.5 * req.latent(1, 2, 3)));
    const auto constant = mock_denoise(MockKind::parse("constant:0.7"), req).latent;
    CHECK((constant.plane(0).array() == 0.7f).all());

    // Box blur against a direct edge-clamped 3x3 mean.
    const auto blurred = mock_denoise(MockKind::parse("box_blur:3"), req).latent;
    for (int r = 0; r < 5; ++r)
        for (int q = 0; q < 5; ++q) {
            double sum = 0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dq = -1; dq <= 1; ++dq)
                    sum += req.latent(1, std::clamp(r + dr, 0, 4), std::clamp(q + dq, 0, 4));
            CHECK(blurred(1, r, q) == doctest::Approx(sum / 9).epsilon(1e-5));
        }

    MockDenoiser mock(MockKind::parse("identity"));
    CHECK(mock.register_prompt("a cat") == mock.register_prompt("a cat"));
    CHECK(mock.register_prompt("a cat") != mock.register_prompt("a dog"));
    CHECK(mock.describe() == "mock:identity");
}

TEST_CASE("remote denoiser against a stub backend") {
    StubServer stub;
    std::atomic<int> denoise_calls{0}, embed_calls{0};
    std::string last_key;
    std::mutex key_mutex;
    std::set<std::string> issued;
    stub.server().Post("/api/v1/denoise", [&](const httplib::Request& req, httplib::Response& res) {
        ++denoise_calls;
        {
            std::lock_guard lock(key_mutex);
            last_key = req.get_header_value("Idempotency-Key");
        }
        const auto parsed = decode_denoise_request(req.body);
        DenoiseResponse out{true, parsed.latent, ""};
        if (parsed.prompt_handle == "fail") out = DenoiseResponse{false, {}, "CUDA out of memory"};
        if (parsed.prompt_handle == "http500") {
            res.status = 500;
            res.set_content(R"({"status":"error","message":"model not loaded"})", "application/json");
            return;
        }
        if (parsed.prompt_handle == "short") out.latent = Image<float>(4, 4, 4);
        if (parsed.prompt_handle.rfind("e:", 0) == 0) {
            std::lock_guard lock(key_mutex);
            if (!issued.count(parsed.prompt_handle)) out = DenoiseResponse{false, {}, "unknown prompt handle"};
        }
        res.set_content(encode_denoise_response(out), "application/json");
    });
    stub.server().Post("/api/v1/embed", [&](const httplib::Request& req, httplib::Response& res) {
        ++embed_calls;
        const auto j = json::parse(req.body);
        const std::string handle = j.contains("prompt_text") ? "t:" + j.at("prompt_text").get<std::string>()
                                                             : "e:" + std::to_string(decode_floats(j.at("embedding_b64").get<std::string>()).size());
        {
            std::lock_guard lock(key_mutex);
            issued.insert(handle);
        }
        res.set_content(json{{"prompt_handle", handle}}.dump(), "application/json");
    });
    stub.server().Post("/api/v1/decode", [&](const httplib::Request& req, httplib::Response& res) {
        const auto j = json::parse(req.body);
        const auto shape = j.at("shape").get<std::vector<int>>();
        Image<float> img(3, shape[1] * 8, shape[2] * 8, 0.5f);
        res.set_content(json{{"status", "ok"}, {"shape", {3, img.rows(), img.cols()}}, {"image_b64", encode_image(img)}}.dump(),
                        "application/json");
    });

    RemoteDenoiser remote(stub.url("/api/"), std::chrono::seconds(5), 1);

    SUBCASE("echo round trip with idempotency key") {
        const auto req = sample_request();
        const auto resp = remote.denoise(req);
        CHECK(resp.ok);
        CHECK(resp.latent == req.latent);
        CHECK(last_key == "s1/749/16/32");
        CHECK(denoise_calls == 1);
        const auto free_fn = remote_denoise(stub.url("/api"), req, std::chrono::seconds(5), 0);
        CHECK(free_fn.latent == req.latent);
    }
    SUBCASE("backend errors are surfaced without retrying") {
        auto req = sample_request();
        req.prompt_handle = "fail";
        try {
            remote.denoise(req);
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(std::string(e.what()) == "CUDA out of memory");
        }
        req.prompt_handle = "http500";
        try {
            remote.denoise(req);
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(std::string(e.what()).find("model not loaded") != std::string::npos);
        }
        CHECK(denoise_calls == 2);
    }
    SUBCASE("wrong response shape") {
        auto req = sample_request();
        req.prompt_handle = "short";
        CHECK_THROWS_AS(remote.denoise(req), ShapeMismatch);
    }
    SUBCASE("prompt handles are cached per text") {
        CHECK(remote.register_prompt("a red chair") == "t:a red chair");
        CHECK(remote.register_prompt("a red chair") == "t:a red chair");
        CHECK(embed_calls == 1);
    }
    SUBCASE("an embedding handle is accepted by later denoise requests") {
        std::vector<float> emb(768);
        for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = std::sin(0.1f * static_cast<float>(i));
        auto req = sample_request();
        req.prompt_handle = remote.register_embedding(emb);
        CHECK(req.prompt_handle == "e:768");
        CHECK(remote.denoise(req).ok);
        req.prompt_handle = "e:512";
        CHECK_THROWS_AS(remote.denoise(req), BackendError);
    }
    SUBCASE("decode route") {
        const Image<float> latent(4, 6, 6, 0.0f);
        const auto img = remote.decode("s1", latent);
        CHECK(img.channels() == 3);
        CHECK(img.rows() == 48);
        CHECK(img(2, 47, 47) == 0.5f);
    }
}

TEST_CASE("unreachable backend is a transport error after the retry budget") {
    const int port = unused_port();
    RemoteDenoiser remote("http://127.0.0.1:" + std::to_string(port), std::chrono::seconds(2), 2);
    try {
        remote.denoise(sample_request());
        FAIL("expected TransportError");
    } catch (const TimeoutError&) {
        FAIL("refused connection reported as timeout");
    } catch (const TransportError& e) {
        CHECK(std::string(e.what()).find("3 attempts") != std::string::npos);
    }
}

TEST_CASE("slow backend is a timeout") {
    StubServer stub;
    std::atomic<int> calls{0};
    stub.server().Post("/v1/denoise", [&](const httplib::Request& req, httplib::Response& res) {
        ++calls;
        std::this_thread::sleep_for(std::chrono::milliseconds(1500));
        res.set_content(encode_denoise_response(DenoiseResponse{true, decode_denoise_request(req.body).latent, ""}),
                        "application/json");
    });
    RemoteDenoiser remote(stub.url(), std::chrono::milliseconds(300), 1);
    CHECK_THROWS_AS(remote.denoise(sample_request()), TimeoutError);
    CHECK(calls >= 1);
}
