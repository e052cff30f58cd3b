#include "texweave/denoiser.hpp"

#include <httplib.h>
#include <json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "texweave/error.hpp"

namespace texweave {

using nlohmann::json;

// --- Mocks -------------------------------------------------------------------

MockKind MockKind::parse(std::string_view spec) {
    const auto colon = spec.find(':');
    const std::string name(spec.substr(0, colon));
    MockKind kind;
    auto parameter = [&]() {
        if (colon == std::string_view::npos) throw ConfigError("mock '" + name + "' needs a parameter");
        try {
            return std::stod(std::string(spec.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ConfigError("bad mock parameter in '" + std::string(spec) + "'");
        }
    };
    if (name == "identity") {
        kind.type = Type::Identity;
    } else if (name == "constant") {
        kind.type = Type::Constant;
        kind.parameter = parameter();
    } else if (name == "shrink") {
        kind.type = Type::Shrink;
        kind.parameter = parameter();
    } else if (name == "box_blur") {
        kind.type = Type::BoxBlur;
        kind.parameter = parameter();
        const int k = static_cast<int>(kind.parameter);
        if (k < 1 || k % 2 == 0 || k != kind.parameter) throw ConfigError("box_blur kernel must be a positive odd integer");
    } else {
        throw ConfigError("unknown mock denoiser '" + name + "'");
    }
    return kind;
}

std::string MockKind::to_string() const {
    std::ostringstream s;
    switch (type) {
    case Type::Identity: return "identity";
    case Type::Constant: s << "constant:" << parameter; break;
    case Type::Shrink: s << "shrink:" << parameter; break;
    case Type::BoxBlur: s << "box_blur:" << static_cast<int>(parameter); break;
    }
    return s.str();
}

DenoiseResponse mock_denoise(const MockKind& kind, const DenoiseRequest& request) {
    DenoiseResponse resp;
    resp.ok = true;
    const Image<float>& in = request.latent;
    switch (kind.type) {
    case MockKind::Type::Identity:
        resp.latent = in;
        break;
    case MockKind::Type::Constant:
        resp.latent = Image<float>(in.channels(), in.rows(), in.cols(), static_cast<float>(kind.parameter));
        break;
    case MockKind::Type::Shrink:
        resp.latent = in;
        for (int c = 0; c < in.channels(); ++c) resp.latent.plane(c) *= static_cast<float>(kind.parameter);
        break;
    case MockKind::Type::BoxBlur: {
        const int half = static_cast<int>(kind.parameter) / 2;
        const float norm = 1.0f / static_cast<float>((2 * half + 1) * (2 * half + 1));
        resp.latent = Image<float>(in.channels(), in.rows(), in.cols());
        for (int c = 0; c < in.channels(); ++c)
            for (int r = 0; r < in.rows(); ++r)
                for (int col = 0; col < in.cols(); ++col) {
                    float sum = 0.0f;
                    for (int dr = -half; dr <= half; ++dr)
                        for (int dc = -half; dc <= half; ++dc)
                            sum += in(c, std::clamp(r + dr, 0, in.rows() - 1), std::clamp(col + dc, 0, in.cols() - 1));
                    resp.latent(c, r, col) = sum * norm;
                }
        break;
    }
    }
    return resp;
}

namespace {

std::string fnv1a_hex(std::string_view prefix, const void* data, std::size_t size) {
    std::uint64_t h = 1469598103934665603ull;
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    std::ostringstream s;
    s << prefix << std::hex << std::setw(16) << std::setfill('0') << h;
    return s.str();
}

} // namespace

std::string MockDenoiser::register_prompt(const std::string& prompt_text) {
    return fnv1a_hex("mock-prompt-", prompt_text.data(), prompt_text.size());
}

std::string MockDenoiser::register_embedding(std::span<const float> embedding) {
    return fnv1a_hex("mock-embedding-", embedding.data(), embedding.size_bytes());
}

// --- Blob encoding -----------------------------------------------------------

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const unsigned char> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest > 0) {
        std::uint32_t v = bytes[i] << 16;
        if (rest == 2) v |= bytes[i + 1] << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
    std::array<int, 256> lookup;
    lookup.fill(-1);
    for (int i = 0; i < 64; ++i) lookup[static_cast<unsigned char>(kAlphabet[i])] = i;

    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t buffer = 0;
    int bits = 0;
    std::size_t padding = 0;
    for (const char ch : text) {
        if (ch == '=') {
            ++padding;
            continue;
        }
        if (ch == '\n' || ch == '\r') continue;
        const int v = lookup[static_cast<unsigned char>(ch)];
        if (v < 0 || padding > 0) throw Error("invalid base64 input");
        buffer = (buffer << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((buffer >> bits) & 0xff));
        }
    }
    if (padding > 2) throw Error("invalid base64 padding");
    return out;
}

std::string encode_floats(std::span<const float> values) {
    std::vector<unsigned char> bytes(values.size_bytes());
    std::memcpy(bytes.data(), values.data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < bytes.size(); i += 4) std::reverse(bytes.begin() + static_cast<long>(i), bytes.begin() + static_cast<long>(i) + 4);
    return base64_encode(bytes);
}

std::vector<float> decode_floats(std::string_view b64) {
    auto bytes = base64_decode(b64);
    if (bytes.size() % 4 != 0) throw ShapeMismatch("float blob length is not a multiple of 4 bytes");
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < bytes.size(); i += 4) std::reverse(bytes.begin() + static_cast<long>(i), bytes.begin() + static_cast<long>(i) + 4);
    std::vector<float> out(bytes.size() / 4);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

std::string encode_image(const Image<float>& image) {
    std::vector<float> flat;
    flat.reserve(static_cast<std::size_t>(image.channels()) * image.rows() * image.cols());
    for (int c = 0; c < image.channels(); ++c)
        flat.insert(flat.end(), image.plane(c).data(), image.plane(c).data() + image.plane(c).size());
    return encode_floats(flat);
}

Image<float> decode_image(std::string_view b64, int channels, int rows, int cols) {
    const auto flat = decode_floats(b64);
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    if (flat.size() != plane * channels)
        throw ShapeMismatch("blob holds " + std::to_string(flat.size()) + " floats, expected " +
                            std::to_string(plane * channels));
    Image<float> img(channels, rows, cols);
    for (int c = 0; c < channels; ++c) std::memcpy(img.plane(c).data(), flat.data() + c * plane, plane * sizeof(float));
    return img;
}

// --- JSON messages -----------------------------------------------------------

std::string encode_denoise_request(const DenoiseRequest& request) {
    Image<float> depth(1, static_cast<int>(request.depth.rows()), static_cast<int>(request.depth.cols()));
    depth.plane(0) = request.depth;
    json j = {
        {"session_id", request.session_id},
        {"timestep", request.timestep},
        {"shape", {request.latent.channels(), request.latent.rows(), request.latent.cols()}},
        {"latent_b64", encode_image(request.latent)},
        {"depth_b64", encode_image(depth)},
        {"prompt_handle", request.prompt_handle},
    };
    return j.dump();
}

DenoiseRequest decode_denoise_request(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("malformed denoise request: ") + e.what());
    }
    DenoiseRequest req;
    try {
        req.session_id = j.at("session_id").get<std::string>();
        req.timestep = j.at("timestep").get<int>();
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) throw ShapeMismatch("shape must have 3 entries");
        req.latent = decode_image(j.at("latent_b64").get<std::string>(), shape[0], shape[1], shape[2]);
        req.depth = decode_image(j.at("depth_b64").get<std::string>(), 1, shape[1], shape[2]).plane(0);
        req.prompt_handle = j.at("prompt_handle").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(std::string("malformed denoise request: ") + e.what());
    }
    return req;
}

std::string encode_denoise_response(const DenoiseResponse& response) {
    if (!response.ok) return json{{"status", "error"}, {"message", response.message}}.dump();
    return json{{"status", "ok"}, {"latent_b64", encode_image(response.latent)}}.dump();
}

DenoiseResponse decode_denoise_response(std::string_view json_text, int channels, int size) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw BackendError(std::string("unparseable response: ") + e.what());
    }
    DenoiseResponse resp;
    const std::string status = j.value("status", "");
    if (status == "error") {
        resp.message = j.value("message", "");
        return resp;
    }
    if (status != "ok" || !j.contains("latent_b64")) throw BackendError("response has neither ok status nor error message");
    resp.latent = decode_image(j.at("latent_b64").get<std::string>(), channels, size, size);
    resp.ok = true;
    return resp;
}

// --- Remote client -----------------------------------------------------------

RemoteDenoiser::RemoteDenoiser(std::string endpoint, std::chrono::duration<double> timeout, int retries)
    : endpoint_(std::move(endpoint)), timeout_(timeout), retries_(std::max(0, retries)) {
    while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
    const auto scheme = endpoint_.find("://");
    const auto path = endpoint_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    host_ = endpoint_.substr(0, path);
    if (path != std::string::npos) prefix_ = endpoint_.substr(path);
}

std::string RemoteDenoiser::post(const std::string& route, const std::string& body,
                                 const std::string& idempotency_key) {
    const auto secs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_).count();
    std::string last_error;
    bool timed_out = false;
    for (int attempt = 0; attempt <= retries_; ++attempt) {
        httplib::Client client(host_);
        client.set_connection_timeout(secs / 1000000, secs % 1000000);
        client.set_read_timeout(secs / 1000000, secs % 1000000);
        client.set_write_timeout(secs / 1000000, secs % 1000000);
        httplib::Headers headers;
        if (!idempotency_key.empty()) headers.emplace("Idempotency-Key", idempotency_key);
        auto res = client.Post(prefix_ + route, headers, body, "application/json");
        if (!res) {
            const auto err = res.error();
            timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
            last_error = httplib::to_string(err);
            continue; // transport failure: the request is idempotent, retry
        }
        if (res->status / 100 != 2) {
            std::string message = res->body;
            try {
                const auto j = json::parse(res->body);
                if (j.contains("message")) message = j.at("message").get<std::string>();
            } catch (const json::exception&) {
            }
            throw BackendError("HTTP " + std::to_string(res->status) + ": " + message);
        }
        return res->body;
    }
    const std::string msg = endpoint_ + route + " failed after " + std::to_string(retries_ + 1) + " attempts: " + last_error;
    if (timed_out) throw TimeoutError(msg);
    throw TransportError(msg);
}

DenoiseResponse RemoteDenoiser::denoise(const DenoiseRequest& request) {
    const std::string key = request.session_id + "/" + std::to_string(request.timestep) + "/" +
                            std::to_string(request.window_row) + "/" + std::to_string(request.window_col);
    const std::string body = post("/v1/denoise", encode_denoise_request(request), key);
    auto resp = decode_denoise_response(body, request.latent.channels(), request.latent.rows());
    if (!resp.ok) throw BackendError(resp.message);
    return resp;
}

namespace {
std::string parse_handle(const std::string& body) {
    try {
        const auto j = json::parse(body);
        if (j.value("status", "ok") == "error") throw BackendError(j.value("message", ""));
        const auto handle = j.at("prompt_handle").get<std::string>();
        if (handle.empty()) throw BackendError("backend returned an empty prompt handle");
        return handle;
    } catch (const json::exception& e) {
        throw BackendError(std::string("bad /v1/embed response: ") + e.what());
    }
}
} // namespace

std::string RemoteDenoiser::register_prompt(const std::string& prompt_text) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = prompt_cache_.find(prompt_text); it != prompt_cache_.end()) return it->second;
    }
    const auto handle = parse_handle(post("/v1/embed", json{{"prompt_text", prompt_text}}.dump(), ""));
    std::lock_guard lock(mutex_);
    return prompt_cache_.emplace(prompt_text, handle).first->second;
}

std::string RemoteDenoiser::register_embedding(std::span<const float> embedding) {
    const json body = {{"embedding_b64", encode_floats(embedding)}, {"dim", embedding.size()}};
    return parse_handle(post("/v1/embed", body.dump(), ""));
}

Image<float> RemoteDenoiser::decode(const std::string& session_id, const Image<float>& latent) {
    const json body = {{"session_id", session_id},
                       {"shape", {latent.channels(), latent.rows(), latent.cols()}},
                       {"latent_b64", encode_image(latent)}};
    const std::string text = post("/v1/decode", body.dump(), session_id + "/decode");
    try {
        const auto j = json::parse(text);
        if (j.value("status", "") == "error") throw BackendError(j.value("message", ""));
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 3 || shape[0] != 3) throw ShapeMismatch("decoded image must have shape [3, H, W]");
        return decode_image(j.at("image_b64").get<std::string>(), 3, shape[1], shape[2]);
    } catch (const json::exception& e) {
        throw BackendError(std::string("bad /v1/decode response: ") + e.what());
    }
}

DenoiseResponse remote_denoise(const std::string& endpoint, const DenoiseRequest& request,
                               std::chrono::duration<double> timeout, int retries) {
    RemoteDenoiser client(endpoint, timeout, retries);
    return client.denoise(request);
}

} // namespace texweave
