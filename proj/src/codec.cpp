#include "precodec/codec.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace precodec {

namespace {

constexpr int kQuantScale[6] = {26214, 23302, 20560, 18396, 16384, 14564};
constexpr int kLevelScale[6] = {40, 45, 51, 57, 64, 72};

// HEVC 8-point DCT basis.
constexpr int kDct8[8][8] = {
    {64, 64, 64, 64, 64, 64, 64, 64},     {89, 75, 50, 18, -18, -50, -75, -89},
    {83, 36, -36, -83, -83, -36, 36, 83}, {75, -18, -89, -50, 50, 89, 18, -75},
    {64, -64, -64, 64, 64, -64, -64, 64}, {50, -89, 18, 75, -75, -18, 89, -50},
    {36, -83, 83, -36, -36, 83, -83, 36}, {18, -50, 75, -89, 89, -75, 50, -18}};

// out = M * in * M^T with per-stage rounding shifts (forward) or
// M^T * in * M (inverse).
void transform(const int in[64], int out[64], bool inverse) {
  const int s1 = inverse ? 7 : 2, s2 = inverse ? 12 : 9;
  long tmp[64];
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      long acc = 0;
      for (int k = 0; k < 8; ++k)
        acc += inverse ? static_cast<long>(kDct8[k][i]) * in[k * 8 + j] : static_cast<long>(kDct8[i][k]) * in[k * 8 + j];
      tmp[i * 8 + j] = (acc + (1L << (s1 - 1))) >> s1;
      if (inverse) tmp[i * 8 + j] = std::clamp<long>(tmp[i * 8 + j], -32768, 32767);
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      long acc = 0;
      for (int k = 0; k < 8; ++k)
        acc += inverse ? tmp[i * 8 + k] * kDct8[k][j] : tmp[i * 8 + k] * kDct8[j][k];
      out[i * 8 + j] = static_cast<int>((acc + (1L << (s2 - 1))) >> s2);
    }
}

int bit_length(int v) {
  // ceil(log2(1 + |v|))
  unsigned u = static_cast<unsigned>(std::abs(v));
  int n = 0;
  while ((1u << n) < u + 1u) ++n;
  return n;
}

std::int64_t code_plane(const std::vector<std::uint8_t>& src, std::vector<std::uint8_t>& dst, int w, int h, int qp) {
  const int per = qp / 6, rem = qp % 6;
  const int qbits = 14 + per + 4;
  const long add = 171L << (qbits - 9);
  std::int64_t bits = 0;
  for (int by = 0; by < h; by += 8)
    for (int bx = 0; bx < w; bx += 8) {
      int blk[64], coef[64], rec[64];
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const int sy = std::min(by + y, h - 1), sx = std::min(bx + x, w - 1);
          blk[y * 8 + x] = static_cast<int>(src[static_cast<std::size_t>(sy * w + sx)]) - 128;
        }
      transform(blk, coef, false);
      for (int i = 0; i < 64; ++i) {
        const long a = std::abs(static_cast<long>(coef[i]));
        int level = static_cast<int>((a * kQuantScale[rem] + add) >> qbits);
        if (coef[i] < 0) level = -level;
        bits += bit_length(level) + 1;
        const long d = ((static_cast<long>(level) * kLevelScale[rem]) << per) + 2;
        coef[i] = static_cast<int>(std::clamp<long>(d >> 2, -32768, 32767));
      }
      transform(coef, rec, true);
      for (int y = 0; y < 8 && by + y < h; ++y)
        for (int x = 0; x < 8 && bx + x < w; ++x)
          dst[static_cast<std::size_t>((by + y) * w + bx + x)] = static_cast<std::uint8_t>(std::clamp(rec[y * 8 + x] + 128, 0, 255));
    }
  return bits;
}

}  // namespace

double qp_step(int qp) { return std::pow(2.0, (qp - 4) / 6.0); }

MockFrameResult mock_code_frame(const Frame& frame, int qp) {
  frame.validate();
  if (qp < 0 || qp > 51) throw InvalidArgument("mock codec qp must be in [0,51], got " + std::to_string(qp));
  MockFrameResult r{frame, 0};
  r.bits += code_plane(frame.y, r.decoded.y, frame.width, frame.height, qp);
  r.bits += code_plane(frame.u, r.decoded.u, frame.chroma_width(), frame.chroma_height(), qp);
  r.bits += code_plane(frame.v, r.decoded.v, frame.chroma_width(), frame.chroma_height(), qp);
  return r;
}

void CodecConfig::validate() const {
  if (ladder.empty()) throw ConfigError("codec ladder is empty");
  bool inc = true, dec = true;
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    inc = inc && ladder[i] > ladder[i - 1];
    dec = dec && ladder[i] < ladder[i - 1];
  }
  if (ladder.size() > 1 && !inc && !dec) throw ConfigError("codec ladder must be strictly monotone");
  if (!(timeout_s > 0)) throw ConfigError("codec timeout must be positive");
  if (gop < 1) throw ConfigError("codec gop must be >= 1");
  if (kind == Kind::kMock) {
    if (rate_mode != RateMode::kCqp) throw ConfigError("mock codec only supports cqp ladders");
    for (double q : ladder)
      if (q != std::floor(q) || q < 0 || q > 51) throw ConfigError("mock codec ladder entries must be integer QPs in [0,51]");
    return;
  }
  const std::string rate_ph = rate_mode == RateMode::kCqp ? "{qp}" : "{bitrate_kbps}";
  for (const auto* t : {&encode_cmd, &decode_cmd})
    for (const char* ph : {"{in}", "{out}"})
      if (t->find(ph) == std::string::npos) throw ConfigError(std::string("codec command template lacks ") + ph + ": " + *t);
  if (encode_cmd.find(rate_ph) == std::string::npos) throw ConfigError("encode template lacks " + rate_ph);
  for (double v : ladder)
    if (!(v > 0)) throw ConfigError("ladder points must be positive");
}

CodecConfig x265_two_pass_config(std::vector<double> ladder_kbps) {
  CodecConfig c;
  c.kind = CodecConfig::Kind::kExternal;
  c.rate_mode = CodecConfig::RateMode::kTwoPassBitrate;
  c.ladder = std::move(ladder_kbps);
  c.encode_cmd =
      "ffmpeg -nostdin -y -loglevel error -i {in} -c:v libx265 -preset {preset} -b:v {bitrate_kbps}k "
      "-x265-params pass=1:keyint={gop}:min-keyint={gop}:log-level=error -f hevc /dev/null && "
      "ffmpeg -nostdin -y -loglevel error -i {in} -c:v libx265 -preset {preset} -b:v {bitrate_kbps}k "
      "-x265-params pass=2:keyint={gop}:min-keyint={gop}:log-level=error -f hevc {out}";
  c.decode_cmd = "ffmpeg -nostdin -y -loglevel error -i {in} -pix_fmt yuv420p -f yuv4mpegpipe {out}";
  return c;
}

std::string expand_template(const std::string& tmpl, const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out += tmpl.substr(pos);
      break;
    }
    const auto close = tmpl.find('}', open);
    if (close == std::string::npos) throw ConfigError("unterminated placeholder in '" + tmpl + "'");
    out += tmpl.substr(pos, open - pos);
    const std::string key = tmpl.substr(open + 1, close - open - 1);
    auto it = std::find_if(values.begin(), values.end(), [&](const auto& kv) { return kv.first == key; });
    if (it == values.end()) throw ConfigError("unknown placeholder {" + key + "}");
    out += it->second;
    pos = close + 1;
  }
  return out;
}

ProcessResult run_shell(const std::string& command, const std::filesystem::path& cwd, double timeout_s) {
  const auto log_path = cwd / "process.log";
  const pid_t pid = fork();
  if (pid < 0) throw CodecProcessError("fork failed: " + std::string(std::strerror(errno)));
  if (pid == 0) {
    if (chdir(cwd.c_str()) != 0) _exit(126);
    const int fd = open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      dup2(fd, STDOUT_FILENO);
      dup2(fd, STDERR_FILENO);
      close(fd);
    }
    setpgid(0, 0);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  ProcessResult r;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  int status = 0;
  for (;;) {
    const pid_t w = waitpid(pid, &status, WNOHANG);
    if (w == pid) break;
    if (w < 0 && errno != EINTR) throw CodecProcessError("waitpid failed");
    if (std::chrono::steady_clock::now() > deadline) {
      kill(-pid, SIGKILL);
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      r.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  r.exit_code = r.timed_out ? -1 : (WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status));
  try {
    r.output = read_file(log_path);
  } catch (const IoError&) {
  }
  return r;
}

bool executable_on_path(const std::string& name) {
  const char* path = std::getenv("PATH");
  if (path == nullptr) return false;
  std::stringstream ss(path);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    const auto p = std::filesystem::path(dir.empty() ? "." : dir) / name;
    if (access(p.c_str(), X_OK) == 0) return true;
  }
  return false;
}

int encoder_process_cap(const CodecConfig& cfg) {
  if (cfg.max_processes > 0) return cfg.max_processes;
  if (const char* env = std::getenv("PRECODEC_MAX_ENCODERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

namespace {

std::string format_number(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

std::filesystem::path make_scratch_dir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "precodec-XXXXXX").string();
  if (mkdtemp(tmpl.data()) == nullptr) throw IoError("cannot create scratch directory");
  return tmpl;
}

EncodeResult external_encode(const VideoSeq& seq, const CodecConfig& cfg, double point) {
  const auto dir = make_scratch_dir();
  auto fail = [&dir](const std::string& msg, auto error_tag) -> EncodeResult {
    std::cerr << "precodec: keeping scratch dir " << dir.string() << "\n";
    using E = decltype(error_tag);
    throw E(msg + " (scratch dir kept at " + dir.string() + ")");
  };
  write_y4m(seq, dir / "input.y4m");
  std::vector<std::pair<std::string, std::string>> vals{
      {"in", "input.y4m"},
      {"out", "stream.bin"},
      {"bitrate_kbps", format_number(point)},
      {"qp", format_number(point)},
      {"gop", std::to_string(cfg.gop)},
      {"preset", cfg.preset},
      {"width", std::to_string(seq.width())},
      {"height", std::to_string(seq.height())},
      {"fps", std::to_string(seq.fps_num) + "/" + std::to_string(seq.fps_den)},
  };
  const std::string enc = expand_template(cfg.encode_cmd, vals);
  ProcessResult r = run_shell(enc, dir, cfg.timeout_s);
  if (r.timed_out || r.exit_code != 0)
    return fail("encoder command failed (" + (r.timed_out ? std::string("timeout") : "exit " + std::to_string(r.exit_code)) +
                    "): " + enc + "\n" + r.output,
                CodecProcessError(""));
  if (!std::filesystem::exists(dir / "stream.bin") || std::filesystem::file_size(dir / "stream.bin") == 0)
    return fail("encoder produced no bitstream: " + enc, CodecContractError(""));
  const auto bytes = static_cast<std::int64_t>(std::filesystem::file_size(dir / "stream.bin"));
  vals[0].second = "stream.bin";
  vals[1].second = "decoded.y4m";
  const std::string dec = expand_template(cfg.decode_cmd, vals);
  r = run_shell(dec, dir, cfg.timeout_s);
  if (r.timed_out || r.exit_code != 0)
    return fail("decoder command failed (" + (r.timed_out ? std::string("timeout") : "exit " + std::to_string(r.exit_code)) +
                    "): " + dec + "\n" + r.output,
                CodecProcessError(""));
  VideoSeq decoded;
  try {
    decoded = read_y4m(dir / "decoded.y4m");
  } catch (const Error& e) {
    return fail(std::string("cannot read decoder output: ") + e.what(), CodecContractError(""));
  }
  if (decoded.width() != seq.width() || decoded.height() != seq.height() || decoded.frames.size() != seq.frames.size())
    return fail("decoded video is " + std::to_string(decoded.width()) + "x" + std::to_string(decoded.height()) + " with " +
                    std::to_string(decoded.frames.size()) + " frames, expected " + std::to_string(seq.width()) + "x" +
                    std::to_string(seq.height()) + " with " + std::to_string(seq.frames.size()),
                CodecContractError(""));
  std::filesystem::remove_all(dir);
  EncodeResult out;
  out.decoded = std::move(decoded);
  out.bits_total = bytes * 8;
  out.ladder_point = point;
  return out;
}

}  // namespace

EncodeResult encode_decode(const VideoSeq& seq, const CodecConfig& cfg, double point) {
  seq.validate();
  if (seq.frames.empty()) throw InvalidArgument("cannot encode an empty sequence");
  EncodeResult r;
  if (cfg.kind == CodecConfig::Kind::kMock) {
    r.decoded.fps_num = seq.fps_num;
    r.decoded.fps_den = seq.fps_den;
    for (const Frame& f : seq.frames) {
      MockFrameResult m = mock_code_frame(f, static_cast<int>(point));
      r.bits_total += m.bits;
      r.decoded.frames.push_back(std::move(m.decoded));
    }
    r.ladder_point = point;
  } else {
    r = external_encode(seq, cfg, point);
    r.decoded.fps_num = seq.fps_num;
    r.decoded.fps_den = seq.fps_den;
  }
  const double seconds = static_cast<double>(seq.frames.size()) / seq.fps();
  r.kbps = static_cast<double>(r.bits_total) / seconds / 1000.0;
  return r;
}

std::vector<EncodeResult> run_ladder(const VideoSeq& seq, const CodecConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.ladder.size();
  std::vector<EncodeResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  const int cap = std::max(1, std::min<int>(encoder_process_cap(cfg), static_cast<int>(n)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = encode_decode(seq, cfg, cfg.ladder[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (cap == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < cap; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    std::rethrow_exception(errors[i]);
  }
  return results;
}

}  // namespace precodec
