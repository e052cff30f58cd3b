#pragma once

#include <stdexcept>
#include <string>

namespace texweave {

// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& message, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

class MissingUV : public Error {
public:
    explicit MissingUV(int line)
        : Error("line " + std::to_string(line) + ": face has no texture coordinate indices"), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

class EmptyMesh : public Error {
public:
    EmptyMesh() : Error("mesh has no faces") {}
};

class DegenerateFace : public Error {
public:
    explicit DegenerateFace(int vertex)
        : Error("vertex " + std::to_string(vertex) + " has no non-degenerate incident face"), vertex_(vertex) {}
    int vertex() const noexcept { return vertex_; }

private:
    int vertex_;
};

class EmptyMask : public Error {
public:
    EmptyMask() : Error("mask has no set pixel") {}
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class NoViews : public Error {
public:
    NoViews() : Error("texture optimization needs at least one view") {}
};

class WindowTooLarge : public Error {
public:
    WindowTooLarge(int grid, int window)
        : Error("window " + std::to_string(window) + " does not fit grid " + std::to_string(grid)) {}
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Denoiser-side failures. Everything below is raised before any proposal
// reaches the reconciliation step.
class DenoiserError : public Error {
public:
    using Error::Error;
};

class TransportError : public DenoiserError {
public:
    using DenoiserError::DenoiserError;
};

class TimeoutError : public TransportError {
public:
    using TransportError::TransportError;
};

class BackendError : public DenoiserError {
public:
    using DenoiserError::DenoiserError;
};

// Wraps any denoiser error with the window and timestep that produced it.
class DenoiserFailure : public DenoiserError {
public:
    DenoiserFailure(const std::string& message, int window_row, int window_col, int timestep)
        : DenoiserError("window (" + std::to_string(window_row) + "," + std::to_string(window_col) +
                        ") at timestep " + std::to_string(timestep) + ": " + message),
          window_row_(window_row), window_col_(window_col), timestep_(timestep) {}
    int window_row() const noexcept { return window_row_; }
    int window_col() const noexcept { return window_col_; }
    int timestep() const noexcept { return timestep_; }

private:
    int window_row_;
    int window_col_;
    int timestep_;
};

} // namespace texweave
