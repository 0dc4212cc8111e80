// Drives the built `visifilter` binary: exit codes, output files, replay.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "visifilter/teleop_server.hpp"

namespace fs = std::filesystem;
using namespace visifilter;

namespace {

const std::string kCli = VISIFILTER_CLI;
const std::string kDir = VISIFILTER_SCENARIO_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("visifilter_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

// Runs a shell command; returns the exit status and captures stderr.
int sh(const std::string& args, std::string* err = nullptr, const std::string& env = "") {
  const fs::path errfile = scratch("stderr.txt");
  const int raw = std::system((env + " " + kCli + " " + args + " >/dev/null 2>" + errfile.string()).c_str());
  if (err) {
    std::ifstream in(errfile);
    *err = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

unsigned short free_port() {
  boost::asio::io_context ioc;
  boost::asio::ip::tcp::acceptor a(ioc, {boost::asio::ip::make_address("127.0.0.1"), 0});
  return a.local_endpoint().port();
}

}  // namespace

TEST(Cli, RunWritesTheThreeArtifacts) {
  const fs::path out = scratch("example");
  ASSERT_EQ(sh("run " + kDir + "/example3.json --out " + out.string()), 0);
  ASSERT_TRUE(fs::exists(out / "trace.csv"));
  const Json m = Json::parse(slurp(out / "metrics.json"));
  EXPECT_GE(m["min_w"].get<double>(), 5.0);
  EXPECT_EQ(m["ticks"], 2001);
  EXPECT_EQ(m["breaches"], 0);
  const std::string resolved = slurp(out / "resolved_scenario.json");
  EXPECT_EQ(scenario_to_json(scenario_from_json(parse_json_text(resolved))).dump(2) + "\n", resolved);
  std::ifstream csv(out / "trace.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("t,q0,q1,q2,w,w_hat,h1_min,h2_min,h3_min,h4_min,h5_min,h6,v_ref0,", 0), 0u);
}

TEST(Cli, ReplayAndRerunAreBitIdentical) {
  const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
  ASSERT_EQ(sh("run " + kDir + "/example3.json --out " + a.string()), 0);
  ASSERT_EQ(sh("run " + kDir + "/example3.json --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "trace.csv"), slurp(b / "trace.csv"));
  ASSERT_EQ(sh("metrics " + (a / "trace.csv").string() + " --out " + (a / "replay.json").string()), 0);
  EXPECT_EQ(slurp(a / "replay.json"), slurp(a / "metrics.json"));
  ASSERT_EQ(sh("run " + (a / "resolved_scenario.json").string() + " --out " + c.string()), 0);
  EXPECT_EQ(slurp(c / "trace.csv"), slurp(a / "trace.csv"));
}

TEST(Cli, InvalidInputExitsWithTwo) {
  const fs::path bad = scratch("bad.json");
  std::ofstream(bad) << "{ \"schema_version\": 1,\n  \"duration\": }";
  std::string err;
  EXPECT_EQ(sh("run " + bad.string() + " --out " + scratch("o1").string(), &err), 2);
  EXPECT_NE(err.find("line 2"), std::string::npos) << err;

  EXPECT_EQ(sh("run " + kDir + "/example3.json --set duration=0.0 --out " + scratch("o2").string(), &err), 2);
  EXPECT_NE(err.find("duration > 0"), std::string::npos) << err;

  EXPECT_EQ(sh("run " + kDir + "/example3.json --set filter.bogus=1 --out " + scratch("o3").string(), &err), 2);
  EXPECT_NE(err.find("filter.bogus"), std::string::npos) << err;

  EXPECT_EQ(sh("run /nonexistent/scenario.json"), 2);
  EXPECT_EQ(sh("frobnicate"), 2);
}

TEST(Cli, InfeasibleStartExitsWithThree) {
  std::string err;
  EXPECT_EQ(sh("run " + kDir + "/example3.json --set filter.W=29.5 --out " + scratch("o").string(), &err), 3);
  EXPECT_NE(err.find("deficit"), std::string::npos) << err;
}

TEST(Cli, SeedEnvironmentOverridesEverySeed) {
  const fs::path out = scratch("seeded");
  ASSERT_EQ(sh("run " + kDir + "/wall_inspection.json --set duration=0.5 --out " + out.string(), nullptr,
               "VISIFILTER_SEED=9"),
            0);
  const Json r = Json::parse(slurp(out / "resolved_scenario.json"));
  EXPECT_EQ(r["filter"]["seed"], 9);
  EXPECT_EQ(r["world"]["walls"][0]["seed"], 9);
  EXPECT_EQ(sh("run " + kDir + "/example3.json --out " + out.string(), nullptr, "VISIFILTER_SEED=x"), 2);
}

TEST(Cli, CheckSuites) {
  EXPECT_EQ(sh("check equivalence"), 0);
  EXPECT_EQ(sh("check qp-oracle"), 0);
  EXPECT_EQ(sh("check propagation"), 0);
  EXPECT_EQ(sh("check nonsense"), 2);
}

TEST(Cli, ServeRejectsBatchScenariosAndBusyPorts) {
  EXPECT_EQ(sh("serve " + kDir + "/example3.json --port " + std::to_string(free_port())), 2);
  ServerOptions opt;
  opt.port = 0;
  TeleopServer holder(load_scenario(kDir + "/teleop.json"), opt);
  EXPECT_EQ(sh("serve " + kDir + "/teleop.json --port " + std::to_string(holder.port())), 4);
}

TEST(Cli, ServeStreamsStateToAClient) {
  namespace asio = boost::asio;
  namespace websocket = boost::beast::websocket;
  const unsigned short port = free_port();
  // timeout stops the server with SIGTERM, which it handles.
  std::thread server([&] { sh("serve " + kDir + "/teleop.json --port " + std::to_string(port), nullptr, "timeout 4"); });
  asio::io_context ioc;
  websocket::stream<asio::ip::tcp::socket> ws(ioc);
  bool connected = false;
  for (int i = 0; i < 100 && !connected; ++i) {
    boost::system::error_code ec;
    ws.next_layer().connect({asio::ip::make_address("127.0.0.1"), port}, ec);
    if (!ec) {
      connected = true;
    } else {
      ws.next_layer().close();
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
  ASSERT_TRUE(connected);
  ws.handshake("127.0.0.1", "/ws");
  boost::beast::flat_buffer buf;
  ws.read(buf);
  const Json j = Json::parse(boost::beast::buffers_to_string(buf.data()));
  EXPECT_EQ(j["type"], "state");
  EXPECT_EQ(j["landmarks"].size(), 30u);
  ws.close(websocket::close_code::normal);
  server.join();
}
