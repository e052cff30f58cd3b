#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "texweave/image.hpp"

namespace texweave {

/// One window's denoising query. latent is C x S x S, depth S x S in [0, 1].
struct DenoiseRequest {
    std::string session_id;
    int timestep = 0;
    int window_row = 0;
    int window_col = 0;
    Image<float> latent;
    Plane<float> depth;
    std::string prompt_handle;
};

struct DenoiseResponse {
    bool ok = false;
    Image<float> latent;
    std::string message; // set when !ok
};

/// The per-window proposal function of the reconciliation scheme: one call
/// returns the proposed next-step latent for a window.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual DenoiseResponse denoise(const DenoiseRequest& request) = 0;
    /// Returns an opaque handle for a text prompt; stable within a session.
    virtual std::string register_prompt(const std::string& prompt_text) = 0;
    /// Returns an opaque handle for a precomputed prompt embedding.
    virtual std::string register_embedding(std::span<const float> embedding) = 0;
    virtual std::string describe() const = 0;
};

// --- In-process mocks -------------------------------------------------------

struct MockKind {
    enum class Type { Identity, Constant, Shrink, BoxBlur };
    Type type = Type::Identity;
    double parameter = 0.0; // c, gamma, or kernel size k

    /// Parses "identity", "constant:0.7", "shrink:0.5" or "box_blur:3".
    static MockKind parse(std::string_view spec);
    std::string to_string() const;
};

/// Pure function of the request latent: identity, constant c, gamma * x, or
/// a k x k mean filter (odd k) with edge clamping.
DenoiseResponse mock_denoise(const MockKind& kind, const DenoiseRequest& request);

class MockDenoiser final : public Denoiser {
public:
    explicit MockDenoiser(MockKind kind) : kind_(kind) {}
    DenoiseResponse denoise(const DenoiseRequest& request) override { return mock_denoise(kind_, request); }
    std::string register_prompt(const std::string& prompt_text) override;
    std::string register_embedding(std::span<const float> embedding) override;
    std::string describe() const override { return "mock:" + kind_.to_string(); }

private:
    MockKind kind_;
};

// --- Wire protocol v1 -------------------------------------------------------
// Blobs are little-endian float32, row-major (C, H, W), base64-encoded.

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

std::string encode_floats(std::span<const float> values);
std::vector<float> decode_floats(std::string_view b64);

std::string encode_image(const Image<float>& image);
/// Throws ShapeMismatch when the blob length disagrees with the shape.
Image<float> decode_image(std::string_view b64, int channels, int rows, int cols);

std::string encode_denoise_request(const DenoiseRequest& request);
/// Throws ShapeMismatch or Error on malformed input.
DenoiseRequest decode_denoise_request(std::string_view json_text);
std::string encode_denoise_response(const DenoiseResponse& response);
/// Parses a response and checks its latent against the expected shape.
DenoiseResponse decode_denoise_response(std::string_view json_text, int channels, int size);

inline constexpr const char* kDenoiserUrlEnv = "TEXWEAVE_DENOISER_URL";

/// HTTP client for a remote backend. Safe for concurrent use.
class RemoteDenoiser final : public Denoiser {
public:
    RemoteDenoiser(std::string endpoint, std::chrono::duration<double> timeout = std::chrono::seconds(60),
                   int retries = 2);

    /// Transport failures are retried up to the retry budget; backend errors
    /// are surfaced verbatim as BackendError; wrong shapes as ShapeMismatch.
    DenoiseResponse denoise(const DenoiseRequest& request) override;
    std::string register_prompt(const std::string& prompt_text) override;
    std::string register_embedding(std::span<const float> embedding) override;
    std::string describe() const override { return "remote:" + endpoint_; }

    /// Latent (C x L x L) to RGB image in [0, 1] via POST /v1/decode.
    Image<float> decode(const std::string& session_id, const Image<float>& latent);

    const std::string& endpoint() const { return endpoint_; }

private:
    std::string post(const std::string& route, const std::string& body, const std::string& idempotency_key);

    std::string endpoint_;
    std::string host_;     // scheme://host:port
    std::string prefix_;   // optional path prefix
    std::chrono::duration<double> timeout_;
    int retries_;
    std::mutex mutex_;
    std::map<std::string, std::string> prompt_cache_;
};

/// Same protocol as remote_denoise in free-function form.
DenoiseResponse remote_denoise(const std::string& endpoint, const DenoiseRequest& request,
                               std::chrono::duration<double> timeout, int retries);

} // namespace texweave
