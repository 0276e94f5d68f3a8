import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("fetches window listings from /api/windows", async () => {
    const fetchFn = vi.fn(async () => jsonResponse([{ id: "w1", frame_count: 13 }]));
    const client = new ApiClient("", fetchFn);
    const windows = await client.listWindows();
    expect(fetchFn).toHaveBeenCalledWith("/api/windows", undefined);
    expect(windows[0]?.id).toBe("w1");
  });

  it("URL-encodes window ids", async () => {
    const fetchFn = vi.fn(async () => jsonResponse({ id: "a:w0001", frames: [] }));
    await new ApiClient("", fetchFn).windowDetail("a:w0001");
    expect(fetchFn).toHaveBeenCalledWith("/api/windows/a%3Aw0001", undefined);
  });

  it("POSTs annotations as JSON", async () => {
    const fetchFn = vi.fn(async () => jsonResponse({ duplicate: false }));
    const client = new ApiClient("", fetchFn);
    await client.postAnnotation({
      sample_id: "s1",
      keep: true,
      label: "Yes",
      explanation: "faded laneline",
      annotator: "t",
      nonce: "n1",
    });
    const [url, init] = fetchFn.mock.calls[0]!;
    expect(url).toBe("/api/annotations");
    expect(init?.method).toBe("POST");
    expect(JSON.parse(init?.body as string).nonce).toBe("n1");
  });

  it("raises ApiError with the server detail on failure", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse({ detail: "label Yes requires an explanation" }, 400),
    );
    const client = new ApiClient("", fetchFn);
    await expect(
      client.postAnnotation({
        sample_id: "s1",
        keep: true,
        label: "Yes",
        explanation: "",
        annotator: "t",
        nonce: "n",
      }),
    ).rejects.toMatchObject({ status: 400, detail: "label Yes requires an explanation" });
  });

  it("wraps non-JSON failures too", async () => {
    const fetchFn = vi.fn(async () => new Response("boom", { status: 500 }));
    await expect(new ApiClient("", fetchFn).progress()).rejects.toBeInstanceOf(ApiError);
  });
});
